"""
Quasi-periodic diffeomorphisms φ = id + f.

Everything that composes or inverts works on the torus lift: with
θ = Ω_p(x) and f = F∘Ω_p, the map φ lifts to Φ(θ) = θ + Ω F(θ) on T^M, and
g∘φ is the pull-back of G∘Φ. Grid samples of G∘Φ are turned back into box
coefficients with an M-dimensional FFT.
"""

import logging
from dataclasses import dataclass, field
from functools import cached_property
from itertools import permutations
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from scipy import fft as sp_fft

from .errors import DiffeoMarginError, NewtonConvergenceError
from .freq_lattice import FrequencyMatrix, ModeSet
from .qp_field import QPScalar, QPVectorField, evaluate, jacobian, multiply

logger = logging.getLogger(__name__)

SYLVESTER_TOL = 1e-11
SYLVESTER_NODES = 8
NEWTON_HALVINGS = 8
ROUND_TRIP_POINTS = 100

# points × support entries per chunk of direct torus summation
_SUM_CHUNK = 2_000_000

Field = Union[QPScalar, QPVectorField]


def default_grid_size(ms: ModeSet) -> int:
    """2·(2K+1) rounded up to the next power of two"""
    target = 2 * (2 * ms.K + 1)
    return 1 << (target - 1).bit_length()


@dataclass(frozen=True, eq=False)
class TorusGrid:
    """Uniform lattice (j_1/G, ..., j_M/G) on T^M, C-order node numbering"""
    points_per_dim: int
    M: int

    @classmethod
    def for_modes(cls, ms: ModeSet, points_per_dim: Optional[int] = None) -> "TorusGrid":
        G = default_grid_size(ms) if points_per_dim is None else int(points_per_dim)
        if G < 2 * (2 * ms.K + 1):
            raise ValueError(f"grid of {G} points per dimension under-resolves K={ms.K}; need >= {2 * (2 * ms.K + 1)}")
        return cls(points_per_dim=G, M=ms.M)

    @property
    def shape(self) -> Tuple[int, ...]:
        return (self.points_per_dim,) * self.M

    @property
    def size(self) -> int:
        return self.points_per_dim ** self.M

    @cached_property
    def nodes(self) -> np.ndarray:
        nodes = np.indices(self.shape).reshape(self.M, -1).T / self.points_per_dim
        nodes.setflags(write=False)
        return nodes

    def mode_positions(self, ms: ModeSet) -> np.ndarray:
        """Flat FFT-array position of every box mode (m taken mod G)"""
        return np.ravel_multi_index(tuple((ms.modes % self.points_per_dim).T), self.shape)


# -------------------------------------------------------------------------
# Torus-side sampling
# -------------------------------------------------------------------------


def _as_rows(f: Field) -> np.ndarray:
    return f.coeffs if isinstance(f, QPVectorField) else f.coeffs[None, :]


def _samples_from_rows(rows: np.ndarray, ms: ModeSet, grid: TorusGrid) -> np.ndarray:
    spectrum = np.zeros((rows.shape[0], grid.size), dtype=complex)
    spectrum[:, grid.mode_positions(ms)] = rows
    spectrum = spectrum.reshape((rows.shape[0],) + grid.shape)
    axes = tuple(range(1, grid.M + 1))
    values = sp_fft.ifftn(spectrum, axes=axes, norm="forward")
    return values.reshape(rows.shape[0], -1).T


def _rows_from_samples(samples: np.ndarray, ms: ModeSet, grid: TorusGrid) -> np.ndarray:
    data = samples.T.reshape((samples.shape[1],) + grid.shape)
    axes = tuple(range(1, grid.M + 1))
    spectrum = sp_fft.fftn(data, axes=axes, norm="forward").reshape(samples.shape[1], -1)
    return spectrum[:, grid.mode_positions(ms)]


def torus_samples(f: Field, grid: TorusGrid) -> np.ndarray:
    """Values of the torus lift F on the grid nodes, shape (nodes,) or (nodes, n)"""
    values = _samples_from_rows(_as_rows(f), f.modes, grid)
    if f.is_real:
        values = values.real
    return values if isinstance(f, QPVectorField) else values[:, 0]


def torus_sum(rows: np.ndarray, modes: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Σ_m c_m e^{2πi(m, θ)} at arbitrary torus points, rows (C, S) -> (P, C)"""
    out = np.zeros((points.shape[0], rows.shape[0]), dtype=complex)
    if modes.shape[0] == 0:
        return out
    chunk = max(1, _SUM_CHUNK // modes.shape[0])
    for start in range(0, points.shape[0], chunk):
        phase = 2.0 * np.pi * (points[start:start + chunk] @ modes.T)
        out[start:start + chunk] = np.exp(1j * phase) @ rows.T
    return out


def _field_and_gradient_at(f: QPVectorField, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """F(σ) (P, n) and the torus Jacobian dF(σ) (P, n, M) by direct summation"""
    ms = f.modes
    support = f.support
    rows = f.coeffs[:, support]
    modes = ms.modes[support]
    grad_rows = (2j * np.pi * rows[:, None, :] * modes.T[None, :, :]).reshape(ms.n * ms.M, support.size)
    values = torus_sum(np.vstack([rows, grad_rows]), modes, points).real
    n = ms.n
    return values[:, :n], values[:, n:].reshape(-1, n, ms.M)


def _torus_jacobian_samples(f: QPVectorField, grid: TorusGrid) -> np.ndarray:
    ms = f.modes
    rows = 2j * np.pi * f.coeffs[:, None, :] * ms.modes.T[None, :, :]
    values = _samples_from_rows(rows.reshape(-1, ms.size), ms, grid).real
    return values.reshape(-1, ms.n, ms.M)


# -------------------------------------------------------------------------
# Jacobian margin
# -------------------------------------------------------------------------


def sylvester_gap(omega: FrequencyMatrix, A: np.ndarray) -> float:
    """|det(I_M + Ω A) - det(I_n + A Ω)| for an n×M matrix A"""
    Om = omega.entries
    big = np.linalg.det(np.eye(omega.M) + Om @ A)
    small = np.linalg.det(np.eye(omega.n) + A @ Om)
    return float(abs(big - small))


def jacobian_margin(f: QPVectorField, grid: TorusGrid, seed: int = 0) -> float:
    """
    min over grid nodes of det(I_n + [dF](θ) Ω); non-positive values mean the
    map is not a diffeomorphism at this sampling.
    """
    ms = f.modes
    Om = ms.omega.entries
    dF = _torus_jacobian_samples(f, grid)
    dets = np.linalg.det(np.eye(ms.n)[None, :, :] + dF @ Om)

    rng = np.random.default_rng(seed)
    sampled = rng.choice(grid.size, size=min(SYLVESTER_NODES, grid.size), replace=False)
    worst = max(sylvester_gap(ms.omega, dF[p]) for p in sampled)
    if worst > SYLVESTER_TOL:
        logger.warning("Sylvester determinant identity off by %.3e on the sample grid", worst)

    return float(dets.min())


# -------------------------------------------------------------------------
# Diffeomorphisms
# -------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class QPDiffeo:
    """φ = id + displacement with a sampled Jacobian margin"""
    displacement: QPVectorField
    margin: float
    residual: Optional[float] = None

    @property
    def modes(self) -> ModeSet:
        return self.displacement.modes


def make_diffeo(displacement: QPVectorField, grid: TorusGrid, residual: Optional[float] = None) -> QPDiffeo:
    margin = jacobian_margin(displacement, grid)
    if margin <= 0:
        raise DiffeoMarginError(f"det(Id + [df]) reaches {margin:.3e} <= 0: not a diffeomorphism", margin)
    return QPDiffeo(displacement=displacement, margin=margin, residual=residual)


def identity_diffeo(ms: ModeSet) -> QPDiffeo:
    return QPDiffeo(displacement=QPVectorField.zeros(ms), margin=1.0, residual=0.0)


def translation_diffeo(ms: ModeSet, c: Sequence[float]) -> QPDiffeo:
    return QPDiffeo(displacement=QPVectorField.constant(ms, c), margin=1.0, residual=0.0)


def evaluate_diffeo(phi: QPDiffeo, x) -> np.ndarray:
    """φ(x) = x + f(x)"""
    x = np.asarray(x, dtype=float)
    return x + evaluate(phi.displacement, x)


def diffeo_jacobian(phi: QPDiffeo, x) -> np.ndarray:
    """I_n + [df](x), shape (n, n) or (P, n, n)"""
    dfs = jacobian(phi.displacement)
    n = phi.modes.n
    x = np.asarray(x, dtype=float)
    rows = [np.stack([evaluate(dfs[j][k], x) for k in range(n)], axis=-1) for j in range(n)]
    return np.eye(n) + np.stack(rows, axis=-2)


def jacobian_determinant_field(f: QPVectorField) -> QPScalar:
    """det(I_n + [df]) as a Galerkin polynomial in the derivatives of f"""
    ms = f.modes
    n = ms.n
    dfs = jacobian(f)
    entries = [[dfs[j][k] + (1.0 if j == k else 0.0) for k in range(n)] for j in range(n)]
    total = QPScalar.zeros(ms)
    for perm in permutations(range(n)):
        sign = np.linalg.det(np.eye(n)[list(perm)])
        term = entries[0][perm[0]]
        for j in range(1, n):
            term = multiply(term, entries[j][perm[j]])
        total = total + term * float(round(sign))
    return total


# -------------------------------------------------------------------------
# Composition
# -------------------------------------------------------------------------


@dataclass(frozen=True)
class Composition:
    field: Field
    residual: float


def displaced_nodes(phi: QPDiffeo, grid: TorusGrid) -> np.ndarray:
    """Φ(θ) = θ + Ω F(θ) at every node (not reduced mod 1)"""
    F = torus_samples(phi.displacement, grid)
    return grid.nodes + phi.modes.omega.apply(F)


def compose_field_report(g: Field, phi: QPDiffeo, grid: TorusGrid, aliasing_threshold: float = 1e-6) -> Composition:
    """
    g∘φ through the lift: sample G(Φ(θ)) on the grid, transform, keep the box.

    The residual is the max-norm gap between the samples and the resampled
    box-truncated result: it measures what the truncation and aliasing lost.
    """
    if phi.margin <= 0:
        raise DiffeoMarginError("cannot compose with a map of non-positive margin", phi.margin)
    ms = g.modes
    support = g.support
    rows = _as_rows(g)[:, support]
    points = displaced_nodes(phi, grid)
    samples = torus_sum(rows, ms.modes[support], points)
    if g.is_real:
        samples = samples.real

    coeffs = _rows_from_samples(samples, ms, grid)
    resampled = _samples_from_rows(coeffs, ms, grid)
    residual = float(np.abs(resampled - samples).max(initial=0.0))
    if residual > aliasing_threshold:
        logger.warning("Composition aliasing residual %.3e above threshold %.1e", residual, aliasing_threshold)

    if isinstance(g, QPVectorField):
        out = QPVectorField(ms, coeffs, g.is_real)
    else:
        out = QPScalar(ms, coeffs[0], g.is_real)
    return Composition(field=out, residual=residual)


def compose_field(g: Field, phi: QPDiffeo, grid: TorusGrid, aliasing_threshold: float = 1e-6) -> Field:
    return compose_field_report(g, phi, grid, aliasing_threshold).field


def compose_diffeo(psi: QPDiffeo, phi: QPDiffeo, grid: TorusGrid, aliasing_threshold: float = 1e-6) -> QPDiffeo:
    """ψ∘φ = id + f + g∘φ"""
    if psi.margin <= 0 or phi.margin <= 0:
        raise DiffeoMarginError("both maps need a positive margin", min(psi.margin, phi.margin))
    composed = compose_field_report(psi.displacement, phi, grid, aliasing_threshold)
    return make_diffeo(phi.displacement + composed.field, grid, residual=composed.residual)


# -------------------------------------------------------------------------
# Inversion
# -------------------------------------------------------------------------


def _newton_solve(f: QPVectorField, targets: np.ndarray, tol: float, max_iter: int) -> np.ndarray:
    """Solve σ + Ω F(σ) = θ for every row θ of targets by damped Newton"""
    Om = f.modes.omega.entries
    M = f.modes.M

    F0, _ = _field_and_gradient_at(f, targets)
    sigma = targets - F0 @ Om.T

    for _ in range(max_iter):
        F, dF = _field_and_gradient_at(f, sigma)
        r = sigma + F @ Om.T - targets
        size = np.abs(r).max(axis=1)
        active_idx = np.flatnonzero(size > tol)
        if active_idx.size == 0:
            return sigma

        J = np.eye(M)[None, :, :] + np.einsum("an,pnb->pab", Om, dF[active_idx])
        step = np.linalg.solve(J, r[active_idx][:, :, None])[:, :, 0]

        base = sigma[active_idx]
        best = size[active_idx]
        damping = np.ones(active_idx.size)
        pending = np.ones(active_idx.size, dtype=bool)
        for _halving in range(NEWTON_HALVINGS + 1):
            trial = base - damping[:, None] * step
            Ft, _ = _field_and_gradient_at(f, trial[pending])
            rt = trial[pending] + Ft @ Om.T - targets[active_idx][pending]
            improved = np.abs(rt).max(axis=1) < best[pending]
            idx = np.flatnonzero(pending)
            accepted = idx[improved]
            sigma[active_idx[accepted]] = trial[accepted]
            pending[accepted] = False
            if not pending.any():
                break
            damping[pending] *= 0.5
        else:
            # no decrease after all halvings: take the smallest step anyway
            stuck = np.flatnonzero(pending)
            sigma[active_idx[stuck]] = (base - damping[:, None] * step)[stuck]

    F, _ = _field_and_gradient_at(f, sigma)
    size = np.abs(sigma + F @ Om.T - targets).max(axis=1)
    failed = size > tol
    if failed.any():
        raise NewtonConvergenceError(
            f"Newton inversion did not converge on {int(failed.sum())} of {targets.shape[0]} nodes "
            f"(worst residual {size.max():.3e})",
            failed_nodes=int(failed.sum()),
            worst_residual=float(size.max()),
        )
    return sigma


def round_trip_residual(phi: QPDiffeo, inverse: QPDiffeo, points: int = ROUND_TRIP_POINTS,
                        seed: int = 0, radius: float = 10.0) -> float:
    """max |φ(φ^{-1}(x)) - x| over random x in [-radius, radius]^n"""
    rng = np.random.default_rng(seed)
    x = rng.uniform(-radius, radius, size=(points, phi.modes.n))
    back = evaluate_diffeo(phi, evaluate_diffeo(inverse, x))
    return float(np.abs(back - x).max())


def invert(phi: QPDiffeo, grid: TorusGrid, newton_tol: float = 1e-12, max_iter: int = 50) -> QPDiffeo:
    """
    φ^{-1} = id + G with G(θ) = -F(σ) where σ + Ω F(σ) = θ at every grid node.

    The returned map carries the round-trip residual over 100 random points.
    """
    if phi.margin <= 0:
        raise DiffeoMarginError("cannot invert a map of non-positive margin", phi.margin)
    f = phi.displacement
    ms = f.modes
    sigma = _newton_solve(f, np.array(grid.nodes), newton_tol, max_iter)
    F_sigma, _ = _field_and_gradient_at(f, sigma)
    coeffs = _rows_from_samples(-F_sigma, ms, grid)
    displacement = QPVectorField(ms, coeffs, True)
    inverse = make_diffeo(displacement, grid)
    residual = round_trip_residual(phi, inverse)
    logger.debug("Inverted diffeo: margin=%.4f round-trip residual=%.3e", inverse.margin, residual)
    return QPDiffeo(displacement=inverse.displacement, margin=inverse.margin, residual=residual)


# -------------------------------------------------------------------------
# Torus lift and the homomorphism h
# -------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TorusDiffeo:
    """Grid samples of Φ(θ) = θ + Ω F(θ), stored as displacements Ω F(θ) mod 1"""
    grid: TorusGrid
    displacement: np.ndarray = field(repr=False)
    source: QPDiffeo = field(repr=False)

    @property
    def points(self) -> np.ndarray:
        return np.mod(self.grid.nodes + self.displacement, 1.0)


def lift(phi: QPDiffeo, grid: TorusGrid) -> TorusDiffeo:
    F = torus_samples(phi.displacement, grid)
    disp = np.mod(phi.modes.omega.apply(F), 1.0)
    # wrap values that round up to exactly 1
    disp[disp >= 1.0] -= 1.0
    disp.setflags(write=False)
    return TorusDiffeo(grid=grid, displacement=disp, source=phi)


def torus_distance(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Euclidean distance on T^M between rows of a and b"""
    d = np.mod(a - b + 0.5, 1.0) - 0.5
    return np.sqrt(np.sum(d * d, axis=-1))


def homomorphism_check(psi: QPDiffeo, phi: QPDiffeo, grid: TorusGrid) -> float:
    """max over nodes of dist(h(ψ∘φ)(θ), h(ψ)(h(φ)(θ))) on T^M"""
    composed = lift(compose_diffeo(psi, phi, grid), grid).points

    inner = displaced_nodes(phi, grid)
    g = psi.displacement
    support = g.support
    G_at = torus_sum(g.coeffs[:, support], g.modes.modes[support], inner).real
    outer = np.mod(inner + g.modes.omega.apply(G_at), 1.0)
    return float(torus_distance(composed, outer).max(initial=0.0))
