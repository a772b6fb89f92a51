"""
Time integration of the quasi-periodic Euler equation.

Eulerian form:    u_t = -u·∇u + 𝒫(u)
Lagrangian form:  φ̇ = v,  v̇ = R_φ 𝒫 R_{φ^{-1}} v,  with u = v∘φ^{-1}

Both use fixed-step classical RK4 on the coefficient arrays of the fixed mode
box. Products are re-projected onto the box (Galerkin), so energy is conserved
semi-discretely and the only drift is the O(dt⁴) of the scheme.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .errors import DiffeoMarginError, NewtonConvergenceError, SeriesTailError, SolverAbort, ToleranceBreach
from .freq_lattice import ModeSet
from .qp_diffeo import (
    QPDiffeo,
    TorusGrid,
    compose_field,
    identity_diffeo,
    invert,
    jacobian_determinant_field,
    make_diffeo,
)
from .qp_field import (
    NormParams,
    QPScalar,
    QPVectorField,
    averaged_energy,
    divergence,
    evaluate,
    mean_square,
    multiply,
    norm,
)
from .qp_operators import advect, pressure_gradient

logger = logging.getLogger(__name__)

VelocityProvider = Union[QPVectorField, Callable[[float], QPVectorField]]


# -------------------------------------------------------------------------
# State and configuration
# -------------------------------------------------------------------------


@dataclass(frozen=True)
class EulerianState:
    t: float
    u: QPVectorField


@dataclass(frozen=True)
class LagrangianState:
    """v = u∘φ is the Lagrangian velocity, φ the flow map"""
    t: float
    v: QPVectorField
    phi: QPDiffeo

    @classmethod
    def from_eulerian(cls, u: QPVectorField, t: float = 0.0) -> "LagrangianState":
        return cls(t=t, v=u, phi=identity_diffeo(u.modes))


@dataclass
class SolverConfig:
    dt: float
    t_end: float
    grid: Optional[TorusGrid] = None
    div_tol: float = 1e-10
    energy_report_every: int = 1
    norm: Optional[NormParams] = None
    strict: bool = True
    newton_tol: float = 1e-12
    newton_max_iter: int = 50
    aliasing_threshold: float = 1e-6
    series_order: int = 12
    series_tol: float = 1e-12

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.t_end < 0:
            raise ValueError(f"t_end must be nonnegative, got {self.t_end}")
        if self.energy_report_every < 1:
            raise ValueError("energy_report_every must be >= 1")

    def grid_for(self, ms: ModeSet) -> TorusGrid:
        return self.grid if self.grid is not None else TorusGrid.for_modes(ms)

    def norm_for(self, ms: ModeSet) -> NormParams:
        return self.norm if self.norm is not None else NormParams(0, ms.M / 2 + 1)

    def time_steps(self, t0: float = 0.0) -> Iterator[float]:
        """Step sizes from t0 to t_end: full dt steps, the last one trimmed to land on t_end"""
        remaining = self.t_end - t0
        count = int(math.floor(remaining / self.dt + 1e-9))
        for _ in range(count):
            yield self.dt
        leftover = remaining - count * self.dt
        if leftover > 1e-12 * max(1.0, abs(self.t_end)):
            yield leftover


# -------------------------------------------------------------------------
# Diagnostics
# -------------------------------------------------------------------------


@dataclass(frozen=True)
class DiagnosticRecord:
    t: float
    energy: float
    div_norm: float
    norm_ls: float
    momentum: np.ndarray
    flags: Tuple[str, ...] = ()


@dataclass
class Diagnostics:
    records: List[DiagnosticRecord] = field(default_factory=list)

    def record(self, t: float, u: QPVectorField, p: NormParams, flags: Sequence[str] = ()) -> DiagnosticRecord:
        rec = DiagnosticRecord(
            t=float(t),
            energy=averaged_energy(u),
            div_norm=mean_square(divergence(u)),
            norm_ls=norm(u, p),
            momentum=u.mean.copy(),
            flags=tuple(flags),
        )
        if not (math.isfinite(rec.energy) and np.all(np.isfinite(rec.momentum))):
            raise SolverAbort(f"non-finite diagnostics at t={t}", diagnostics=self)
        self.records.append(rec)
        return rec

    @property
    def times(self) -> np.ndarray:
        return np.array([r.t for r in self.records])

    @property
    def energies(self) -> np.ndarray:
        return np.array([r.energy for r in self.records])

    def energy_drift(self) -> float:
        """max relative deviation of E from its first recorded value"""
        e = self.energies
        if e.size == 0 or e[0] == 0:
            return 0.0
        return float(np.abs(e - e[0]).max() / e[0])

    def momentum_drift(self) -> float:
        if not self.records:
            return 0.0
        first = self.records[0].momentum
        return float(max(np.abs(r.momentum - first).max() for r in self.records))

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for r in self.records:
            row = {"t": r.t, "E": r.energy, "div_norm": r.div_norm, "norm_ls": r.norm_ls}
            for j, c in enumerate(r.momentum):
                row[f"momentum_{j + 1}_re"] = c.real
                row[f"momentum_{j + 1}_im"] = c.imag
            row["flags"] = ";".join(r.flags)
            rows.append(row)
        return pd.DataFrame(rows)


# -------------------------------------------------------------------------
# Eulerian integration
# -------------------------------------------------------------------------


def rhs_eulerian(u: QPVectorField) -> QPVectorField:
    """-u·∇u + 𝒫(u)"""
    return pressure_gradient(u) - advect(u)


def step_rk4(state: EulerianState, dt: float) -> EulerianState:
    u = state.u
    k1 = rhs_eulerian(u)
    k2 = rhs_eulerian(u + k1 * (dt / 2))
    k3 = rhs_eulerian(u + k2 * (dt / 2))
    k4 = rhs_eulerian(u + k3 * dt)
    u_next = u + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6)
    return EulerianState(t=state.t + dt, u=u_next)


def cfl_guideline(u: QPVectorField) -> float:
    """0.5 / (max |Λ_m| · Σ_m |û_m|); the sum bounds sup |u|"""
    ms = u.modes
    sup_bound = float(np.sum(np.sqrt(np.sum(np.abs(u.coeffs) ** 2, axis=0))))
    lam = float(ms.lambda_norm.max())
    if sup_bound == 0 or lam == 0:
        return math.inf
    return 0.5 / (lam * sup_bound)


def _check_finite(coeffs: np.ndarray) -> bool:
    return bool(np.all(np.isfinite(coeffs)))


def integrate(state: EulerianState, config: SolverConfig,
              callback: Optional[Callable[[EulerianState, int], None]] = None) -> Tuple[EulerianState, Diagnostics]:
    """
    RK4 from state.t to config.t_end.

    The divergence is checked after every step; a breach raises ToleranceBreach
    carrying the offending state, a non-finite coefficient raises SolverAbort
    carrying the last good one. Both carry the diagnostics so far.
    callback(state, step) runs after every accepted step.
    """
    ms = state.u.modes
    p = config.norm_for(ms)
    diagnostics = Diagnostics()

    div0 = mean_square(divergence(state.u))
    if div0 > config.div_tol:
        raise ToleranceBreach(f"initial ||div u||_0 = {div0:.3e} exceeds div_tol {config.div_tol:.1e}",
                              state=state, diagnostics=diagnostics)

    flags = []
    bound = cfl_guideline(state.u)
    if config.dt > bound:
        logger.warning("dt=%.3e exceeds the CFL guideline %.3e", config.dt, bound)
        flags.append("cfl")
    diagnostics.record(state.t, state.u, p, flags)

    step = 0
    for h in config.time_steps(state.t):
        nxt = step_rk4(state, h)
        step += 1
        if not _check_finite(nxt.u.coeffs):
            raise SolverAbort(f"non-finite coefficients at step {step} (t={nxt.t:.6g})",
                              state=state, diagnostics=diagnostics)
        div = mean_square(divergence(nxt.u))
        if div > config.div_tol:
            raise ToleranceBreach(f"||div u||_0 = {div:.3e} exceeds div_tol {config.div_tol:.1e} at t={nxt.t:.6g}",
                                  state=nxt, diagnostics=diagnostics)
        state = nxt
        if step % config.energy_report_every == 0:
            diagnostics.record(state.t, state.u, p)
        if callback is not None:
            callback(state, step)
        logger.debug("step %d t=%.6g E=%.12e", step, state.t, averaged_energy(state.u))

    if diagnostics.records[-1].t != state.t:
        diagnostics.record(state.t, state.u, p)
    logger.info("Eulerian run finished at t=%.6g after %d steps (energy drift %.3e)",
                state.t, step, diagnostics.energy_drift())
    return state, diagnostics


# -------------------------------------------------------------------------
# Lagrangian integration
# -------------------------------------------------------------------------


def _is_identity(phi: QPDiffeo) -> bool:
    return phi.displacement.support.size == 0


def _invert(phi: QPDiffeo, grid: TorusGrid, config: Optional[SolverConfig]) -> QPDiffeo:
    if _is_identity(phi):
        return phi
    if config is None:
        return invert(phi, grid)
    return invert(phi, grid, config.newton_tol, config.newton_max_iter)


def rhs_lagrangian(v: QPVectorField, phi: QPDiffeo, grid: TorusGrid,
                   inverse: Optional[QPDiffeo] = None, config: Optional[SolverConfig] = None) -> QPVectorField:
    """
    F(v, φ) = (𝒫(v∘φ^{-1}))∘φ.

    Accuracy is bounded by the aliasing residual of the two compositions. A
    precomputed inverse may be passed to skip the Newton solve.
    """
    if phi.margin <= 0:
        raise DiffeoMarginError("flow map lost its Jacobian margin", phi.margin)
    if _is_identity(phi):
        return pressure_gradient(v)
    threshold = config.aliasing_threshold if config is not None else 1e-6
    inverse = inverse if inverse is not None else _invert(phi, grid, config)
    u = compose_field(v, inverse, grid, threshold)
    return compose_field(pressure_gradient(u), phi, grid, threshold)


def _advance_diffeo(phi: QPDiffeo, velocity: QPVectorField, h: float, grid: TorusGrid) -> QPDiffeo:
    return make_diffeo(phi.displacement + velocity * h, grid)


def lagrangian_step(state: LagrangianState, dt: float, grid: TorusGrid,
                    config: Optional[SolverConfig] = None) -> LagrangianState:
    """
    One RK4 step on (φ, v). In strict mode every stage inverts its own φ; the
    relaxed mode reuses the step-start inverse, which is consistent to first
    order in dt only.
    """
    strict = config.strict if config is not None else True
    v, phi = state.v, state.phi
    shared_inverse = None if strict else _invert(phi, grid, config)

    def F(v_s, phi_s):
        return rhs_lagrangian(v_s, phi_s, grid, inverse=shared_inverse, config=config)

    k1_v = F(v, phi)
    k1_f = v
    phi2 = _advance_diffeo(phi, k1_f, dt / 2, grid)
    v2 = v + k1_v * (dt / 2)
    k2_v = F(v2, phi2)
    k2_f = v2
    phi3 = _advance_diffeo(phi, k2_f, dt / 2, grid)
    v3 = v + k2_v * (dt / 2)
    k3_v = F(v3, phi3)
    k3_f = v3
    phi4 = _advance_diffeo(phi, k3_f, dt, grid)
    v4 = v + k3_v * dt
    k4_v = F(v4, phi4)
    k4_f = v4

    v_next = v + (k1_v + k2_v * 2.0 + k3_v * 2.0 + k4_v) * (dt / 6)
    phi_next = _advance_diffeo(phi, k1_f + k2_f * 2.0 + k3_f * 2.0 + k4_f, dt / 6, grid)
    return LagrangianState(t=state.t + dt, v=v_next, phi=phi_next)


def eulerian_from_lagrangian(state: LagrangianState, grid: TorusGrid,
                             config: Optional[SolverConfig] = None) -> QPVectorField:
    """u = v∘φ^{-1}"""
    if _is_identity(state.phi):
        return state.v
    threshold = config.aliasing_threshold if config is not None else 1e-6
    return compose_field(state.v, _invert(state.phi, grid, config), grid, threshold)


def integrate_lagrangian(state: LagrangianState, config: SolverConfig,
                         callback: Optional[Callable[[LagrangianState, int], None]] = None
                         ) -> Tuple[LagrangianState, Diagnostics]:
    """
    RK4 on the Lagrangian system. Diagnostics are taken on the Eulerian
    velocity u = v∘φ^{-1}; margin loss or a failed inversion aborts the run.
    """
    ms = state.v.modes
    grid = config.grid_for(ms)
    p = config.norm_for(ms)
    diagnostics = Diagnostics()
    diagnostics.record(state.t, eulerian_from_lagrangian(state, grid, config), p)

    step = 0
    for h in config.time_steps(state.t):
        try:
            nxt = lagrangian_step(state, h, grid, config)
        except (DiffeoMarginError, NewtonConvergenceError) as e:
            raise SolverAbort(f"Lagrangian step {step + 1} failed at t={state.t:.6g}: {e}",
                              state=state, diagnostics=diagnostics) from e
        step += 1
        if not (_check_finite(nxt.v.coeffs) and _check_finite(nxt.phi.displacement.coeffs)):
            raise SolverAbort(f"non-finite coefficients at step {step}", state=state, diagnostics=diagnostics)
        state = nxt
        if step % config.energy_report_every == 0:
            diagnostics.record(state.t, eulerian_from_lagrangian(state, grid, config), p,
                               flags=(f"margin={state.phi.margin:.4f}",))
        if callback is not None:
            callback(state, step)
        logger.debug("lagrangian step %d t=%.6g margin=%.4f", step, state.t, state.phi.margin)

    if diagnostics.records[-1].t != state.t:
        diagnostics.record(state.t, eulerian_from_lagrangian(state, grid, config), p)
    logger.info("Lagrangian run finished at t=%.6g after %d steps (min margin %.4f)",
                state.t, step, state.phi.margin)
    return state, diagnostics


# -------------------------------------------------------------------------
# Flow maps and particle trajectories
# -------------------------------------------------------------------------


def _provider(u_series: VelocityProvider) -> Callable[[float], QPVectorField]:
    if isinstance(u_series, QPVectorField):
        return lambda t: u_series
    return u_series


class StateHistory:
    """
    Velocity provider over a recorded Eulerian run. Times between two stored
    states are reached by one RK4 sub-step from the earlier one.
    """

    def __init__(self, states: Sequence[EulerianState] = ()):
        self.states: List[EulerianState] = list(states)

    def append(self, state: EulerianState) -> None:
        if self.states and state.t <= self.states[-1].t:
            raise ValueError("states must be appended in increasing time")
        self.states.append(state)

    def __call__(self, t: float) -> QPVectorField:
        if not self.states:
            raise ValueError("empty history")
        times = np.array([s.t for s in self.states])
        k = int(np.searchsorted(times, t + 1e-12, side="right")) - 1
        k = min(max(k, 0), len(self.states) - 1)
        base = self.states[k]
        gap = t - base.t
        if abs(gap) <= 1e-12:
            return base.u
        return step_rk4(base, gap).u


@dataclass(frozen=True)
class FlowMapSeries:
    times: np.ndarray
    maps: Tuple[QPDiffeo, ...]

    def at(self, t: float) -> QPDiffeo:
        """Map stored nearest to t; t must lie within half a step of it"""
        idx = int(np.argmin(np.abs(self.times - t)))
        gaps = np.diff(self.times[max(idx - 1, 0):idx + 2])
        half_step = 0.5 * gaps.max(initial=0.0)
        if abs(self.times[idx] - t) > half_step + 1e-12:
            raise ValueError(
                f"t = {t} is {abs(self.times[idx] - t):.3e} from the nearest stored time {self.times[idx]}; "
                f"the series covers [{self.times[0]}, {self.times[-1]}]"
            )
        return self.maps[idx]


def flow_map(u_series: VelocityProvider, config: SolverConfig) -> FlowMapSeries:
    """
    φ̇ = u(t)∘φ, φ(0) = id, by RK4 on the displacement coefficients.

    Every stage composes u(t_stage) with its stage map; losing the Jacobian
    margin aborts, since the flow has left what this truncation represents.
    """
    u_at = _provider(u_series)
    u0 = u_at(0.0)
    ms = u0.modes
    grid = config.grid_for(ms)
    threshold = config.aliasing_threshold
    phi = identity_diffeo(ms)
    t = 0.0
    times, maps = [t], [phi]

    def velocity(ts, phi_s):
        return compose_field(u_at(ts), phi_s, grid, threshold)

    for h in config.time_steps(0.0):
        try:
            k1 = velocity(t, phi)
            k2 = velocity(t + h / 2, _advance_diffeo(phi, k1, h / 2, grid))
            k3 = velocity(t + h / 2, _advance_diffeo(phi, k2, h / 2, grid))
            k4 = velocity(t + h, _advance_diffeo(phi, k3, h, grid))
            phi = _advance_diffeo(phi, k1 + k2 * 2.0 + k3 * 2.0 + k4, h / 6, grid)
        except DiffeoMarginError as e:
            raise SolverAbort(f"flow map lost its margin at t={t:.6g}: {e}", state=phi) from e
        t += h
        times.append(t)
        maps.append(phi)

    return FlowMapSeries(times=np.array(times), maps=tuple(maps))


@dataclass(frozen=True)
class Trajectories:
    """positions[k, i] is particle i at times[k]"""
    times: np.ndarray
    positions: np.ndarray

    def to_frame(self) -> pd.DataFrame:
        T, P, n = self.positions.shape
        frame = pd.DataFrame({
            "t": np.repeat(self.times, P),
            "seed": np.tile(np.arange(P), T),
        })
        for j in range(n):
            frame[f"x{j + 1}"] = self.positions[:, :, j].reshape(-1)
        return frame


def trajectories(u_series: VelocityProvider, seeds: Sequence[Sequence[float]], config: SolverConfig,
                 every: int = 1) -> Trajectories:
    """ẋ = u(t, x) for each seed by pointwise RK4; no truncation of the flow map is involved"""
    u_at = _provider(u_series)
    x = np.array(seeds, dtype=float)
    if x.ndim != 2:
        raise ValueError("seeds must be a list of n-vectors")
    t = 0.0
    times, positions = [t], [x.copy()]

    step = 0
    for h in config.time_steps(0.0):
        k1 = evaluate(u_at(t), x)
        k2 = evaluate(u_at(t + h / 2), x + k1 * (h / 2))
        k3 = evaluate(u_at(t + h / 2), x + k2 * (h / 2))
        k4 = evaluate(u_at(t + h), x + k3 * h)
        x = x + (k1 + 2 * k2 + 2 * k3 + k4) * (h / 6)
        t += h
        step += 1
        if not np.all(np.isfinite(x)):
            raise SolverAbort(f"non-finite particle position at t={t:.6g}", state=positions[-1])
        if step % every == 0:
            times.append(t)
            positions.append(x.copy())

    if times[-1] != t:
        times.append(t)
        positions.append(x.copy())
    return Trajectories(times=np.array(times), positions=np.stack(positions))


# -------------------------------------------------------------------------
# Lagrangian Fourier coefficients
# -------------------------------------------------------------------------


def exponential_series(z: QPScalar, order: int = 12, tol: float = 1e-12) -> Tuple[QPScalar, float]:
    """
    e^z ≈ Σ_{k<=order} z^k / k! with Galerkin products.

    Returns the sum and the tail bound r^{N+1}/(N+1)! · e^r with r = Σ|ẑ_m| ≥ sup|z|.
    """
    r = float(np.abs(z.coeffs).sum())
    tail = r ** (order + 1) / math.factorial(order + 1) * math.exp(r)
    if tail > tol:
        raise SeriesTailError(
            f"exponential series tail bound {tail:.3e} exceeds {tol:.1e} at order {order} (|z| <= {r:.3f})",
            tail_bound=tail,
        )
    total = QPScalar.constant(z.modes, 1.0)
    term = total
    for k in range(1, order + 1):
        term = multiply(term, z) / k
        total = total + term
    return total, tail


def fourier_coeff_lagrangian(v: Union[QPScalar, QPVectorField], phi: QPDiffeo, m: Sequence[int],
                             order: int = 12, tol: float = 1e-12) -> Union[complex, np.ndarray]:
    """
    û_m of u = v∘φ^{-1} without inverting φ.

    Substituting x = φ(y) in the box average gives
    û_m = coefficient at m of v · det(I + [df]) · e^{-i(Λ_m, f)};
    the determinant is one for volume-preserving flow maps.
    """
    ms = v.modes
    f = phi.displacement
    lam = ms.lambdas[int(ms.index_of(m))]
    z = QPScalar(ms, -1j * np.tensordot(lam, f.coeffs, axes=1), is_real=False)
    weight, tail = exponential_series(z, order, tol)
    if f.support.size:
        weight = multiply(weight, jacobian_determinant_field(f))
    logger.debug("Lagrangian coefficient at %s: series tail bound %.3e", tuple(m), tail)

    if isinstance(v, QPVectorField):
        return np.array([multiply(c, weight).coefficient(m) for c in v.components])
    return multiply(v, weight).coefficient(m)


def lagrangian_coefficients(state: LagrangianState, modes: Sequence[Sequence[int]],
                            config: SolverConfig) -> pd.DataFrame:
    """
    û_m of the Eulerian velocity at the given modes, read off the Lagrangian
    state through the exponential series. The gap column compares each value
    with the coefficient of the composed field v∘φ^{-1}.
    """
    ms = state.v.modes
    u = eulerian_from_lagrangian(state, config.grid_for(ms), config)
    rows = []
    for m in modes:
        series = fourier_coeff_lagrangian(state.v, state.phi, m, config.series_order, config.series_tol)
        row = {"t": state.t, "mode": " ".join(str(int(k)) for k in m)}
        for j, c in enumerate(series):
            row[f"u{j + 1}_re"] = c.real
            row[f"u{j + 1}_im"] = c.imag
        row["gap"] = float(np.abs(series - u.coefficient(m)).max())
        rows.append(row)
    return pd.DataFrame(rows)
