"""
Quasi-periodic scalars and vector fields as truncated Fourier series
f(x) = Σ_m f̂_m e^{i(Λ_m, x)} over a ModeSet box.

Coefficients are held in flat arrays aligned with ModeSet.modes; a zero entry
means the mode is absent from the support. All values are immutable.
"""

import logging
from dataclasses import dataclass
from numbers import Number
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.signal import fftconvolve

from .errors import ModeSetMismatchError
from .freq_lattice import ModeSet

logger = logging.getLogger(__name__)

# coefficients below this modulus are dropped after every operation
PRUNE_TOL = 1e-15

# support-pair count above which products switch to the dense FFT path
DIRECT_PAIR_LIMIT = 250_000

# evaluation points processed per chunk (points × support entries)
_EVAL_CHUNK = 2_000_000


def _finalize(coeffs: np.ndarray, ms: ModeSet, is_real: bool) -> np.ndarray:
    out = np.array(coeffs, dtype=complex)
    if is_real:
        rev = ms.negation_index()
        out = 0.5 * (out + np.conj(out[..., rev]))
    out[np.abs(out) < PRUNE_TOL] = 0.0
    out.setflags(write=False)
    return out


def _same_modes(a: ModeSet, b: ModeSet) -> None:
    if a is not b:
        raise ModeSetMismatchError("operands are defined on different ModeSet instances")


class QPScalar:
    """Quasi-periodic scalar: flat complex coefficient array over a ModeSet"""

    __slots__ = ("modes", "coeffs", "is_real")

    def __init__(self, modes: ModeSet, coeffs: np.ndarray, is_real: bool = True):
        coeffs = np.asarray(coeffs)
        if coeffs.shape != (modes.size,):
            raise ValueError(f"expected {modes.size} coefficients, got shape {coeffs.shape}")
        self.modes = modes
        self.is_real = bool(is_real)
        self.coeffs = _finalize(coeffs, modes, self.is_real)

    # ---------------------------------------------------------------------
    # Constructors
    # ---------------------------------------------------------------------

    @classmethod
    def zeros(cls, ms: ModeSet) -> "QPScalar":
        return cls(ms, np.zeros(ms.size, dtype=complex))

    @classmethod
    def constant(cls, ms: ModeSet, value: complex) -> "QPScalar":
        coeffs = np.zeros(ms.size, dtype=complex)
        coeffs[ms.zero_index] = value
        return cls(ms, coeffs, is_real=np.isreal(value))

    @classmethod
    def from_modes(cls, ms: ModeSet, entries: Mapping[Tuple[int, ...], complex], is_real: bool = True) -> "QPScalar":
        """
        Build from {mode: coefficient}.

        For real fields a coefficient given only at m is mirrored to -m as its
        conjugate; when both are given they are averaged into Hermitian form.
        """
        coeffs = np.zeros(ms.size, dtype=complex)
        given = np.zeros(ms.size, dtype=bool)
        for mode, value in entries.items():
            idx = int(ms.index_of(mode))
            coeffs[idx] += value
            given[idx] = True
        if is_real:
            rev = ms.negation_index()
            mirror = given[rev] & ~given
            coeffs[mirror] = np.conj(coeffs[rev][mirror])
        return cls(ms, coeffs, is_real=is_real)

    @classmethod
    def exponential(cls, ms: ModeSet, mode: Sequence[int], amplitude: complex = 1.0) -> "QPScalar":
        """The complex exponential amplitude·e^{i(Λ_m, x)}"""
        coeffs = np.zeros(ms.size, dtype=complex)
        coeffs[int(ms.index_of(mode))] = amplitude
        return cls(ms, coeffs, is_real=False)

    # ---------------------------------------------------------------------
    # Views
    # ---------------------------------------------------------------------

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.coeffs)

    @property
    def mean(self) -> complex:
        return complex(self.coeffs[self.modes.zero_index])

    def coefficient(self, mode: Sequence[int]) -> complex:
        return complex(self.coeffs[int(self.modes.index_of(mode))])

    def as_dict(self) -> Dict[Tuple[int, ...], complex]:
        return {tuple(self.modes.modes[i].tolist()): complex(self.coeffs[i]) for i in self.support}

    def max_abs(self) -> float:
        return float(np.abs(self.coeffs).max(initial=0.0))

    def _like(self, coeffs: np.ndarray, is_real: Optional[bool] = None) -> "QPScalar":
        return QPScalar(self.modes, coeffs, self.is_real if is_real is None else is_real)

    # ---------------------------------------------------------------------
    # Arithmetic
    # ---------------------------------------------------------------------

    def __add__(self, other):
        if isinstance(other, QPScalar):
            _same_modes(self.modes, other.modes)
            return self._like(self.coeffs + other.coeffs, self.is_real and other.is_real)
        if isinstance(other, Number):
            return self + QPScalar.constant(self.modes, other)
        return NotImplemented

    __radd__ = __add__

    def __neg__(self):
        return self._like(-self.coeffs)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, QPScalar):
            return multiply(self, other)
        if isinstance(other, Number):
            return self._like(self.coeffs * other, self.is_real and np.isreal(other))
        return NotImplemented

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Number):
            return self * (1.0 / other)
        return NotImplemented

    def conj(self) -> "QPScalar":
        """Pointwise complex conjugate: coefficients conj(f̂_{-m})"""
        return self._like(np.conj(self.coeffs[self.modes.negation_index()]))

    def __repr__(self) -> str:
        return f"QPScalar(K={self.modes.K}, M={self.modes.M}, support={self.support.size}, real={self.is_real})"


class QPVectorField:
    """n-component quasi-periodic field, coefficients of shape (n, size)"""

    __slots__ = ("modes", "coeffs", "is_real")

    def __init__(self, modes: ModeSet, coeffs: np.ndarray, is_real: bool = True):
        coeffs = np.asarray(coeffs)
        if coeffs.shape != (modes.n, modes.size):
            raise ValueError(f"expected coefficient shape {(modes.n, modes.size)}, got {coeffs.shape}")
        self.modes = modes
        self.is_real = bool(is_real)
        self.coeffs = _finalize(coeffs, modes, self.is_real)

    @classmethod
    def zeros(cls, ms: ModeSet) -> "QPVectorField":
        return cls(ms, np.zeros((ms.n, ms.size), dtype=complex))

    @classmethod
    def constant(cls, ms: ModeSet, value: Sequence[float]) -> "QPVectorField":
        coeffs = np.zeros((ms.n, ms.size), dtype=complex)
        coeffs[:, ms.zero_index] = np.asarray(value, dtype=complex)
        return cls(ms, coeffs, is_real=bool(np.all(np.isreal(value))))

    @classmethod
    def from_components(cls, components: Sequence[QPScalar]) -> "QPVectorField":
        ms = components[0].modes
        for comp in components:
            _same_modes(ms, comp.modes)
        if len(components) != ms.n:
            raise ValueError(f"need {ms.n} components, got {len(components)}")
        return cls(ms, np.stack([c.coeffs for c in components]), all(c.is_real for c in components))

    @classmethod
    def from_modes(cls, ms: ModeSet, entries: Mapping[Tuple[int, ...], Sequence[complex]], is_real: bool = True) -> "QPVectorField":
        comps = []
        for j in range(ms.n):
            comps.append(QPScalar.from_modes(ms, {m: v[j] for m, v in entries.items()}, is_real=is_real))
        return cls.from_components(comps)

    @property
    def components(self) -> Tuple[QPScalar, ...]:
        return tuple(QPScalar(self.modes, self.coeffs[j], self.is_real) for j in range(self.modes.n))

    def __getitem__(self, j: int) -> QPScalar:
        return QPScalar(self.modes, self.coeffs[j], self.is_real)

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(np.any(self.coeffs != 0, axis=0))

    @property
    def mean(self) -> np.ndarray:
        return np.array(self.coeffs[:, self.modes.zero_index])

    def coefficient(self, mode: Sequence[int]) -> np.ndarray:
        return np.array(self.coeffs[:, int(self.modes.index_of(mode))])

    def max_abs(self) -> float:
        return float(np.abs(self.coeffs).max(initial=0.0))

    def _like(self, coeffs: np.ndarray, is_real: Optional[bool] = None) -> "QPVectorField":
        return QPVectorField(self.modes, coeffs, self.is_real if is_real is None else is_real)

    def __add__(self, other):
        if isinstance(other, QPVectorField):
            _same_modes(self.modes, other.modes)
            return self._like(self.coeffs + other.coeffs, self.is_real and other.is_real)
        return NotImplemented

    def __neg__(self):
        return self._like(-self.coeffs)

    def __sub__(self, other):
        return self + (-other)

    def __mul__(self, other):
        if isinstance(other, Number):
            return self._like(self.coeffs * other, self.is_real and np.isreal(other))
        if isinstance(other, QPScalar):
            return QPVectorField.from_components([multiply(c, other) for c in self.components])
        return NotImplemented

    __rmul__ = __mul__

    def __repr__(self) -> str:
        return f"QPVectorField(n={self.modes.n}, K={self.modes.K}, support={self.support.size})"


Field = Union[QPScalar, QPVectorField]


@dataclass(frozen=True)
class NormParams:
    """Weights of the ||.||_{l,s} norm: ⟨Λ_m⟩^{2l} ⟨m⟩^{2s}"""
    l: int = 0
    s: float = 2.0

    def __post_init__(self):
        if self.l < 0 or int(self.l) != self.l:
            raise ValueError(f"l must be a nonnegative integer, got {self.l}")

    def validate(self, M: int) -> None:
        if not self.s > M / 2:
            raise ValueError(f"s must exceed M/2 = {M / 2}, got {self.s}")


# -------------------------------------------------------------------------
# Evaluation
# -------------------------------------------------------------------------


def evaluate(f: Field, x) -> Union[float, np.ndarray]:
    """
    Direct summation Σ f̂_m e^{i(Λ_m, x)} at one point (shape (n,)) or many (shape (P, n)).

    Real fields return the real part; vector fields add a trailing axis of length n.
    """
    ms = f.modes
    pts = np.asarray(x, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    if pts.shape[-1] != ms.n:
        raise ValueError(f"points must have {ms.n} coordinates, got {pts.shape[-1]}")

    support = f.support
    vector = isinstance(f, QPVectorField)
    coeffs = f.coeffs[..., support]
    coeffs = coeffs.T if vector else coeffs[:, None]
    lambdas = ms.lambdas[support]

    out = np.zeros((pts.shape[0], coeffs.shape[1]), dtype=complex)
    if support.size:
        chunk = max(1, _EVAL_CHUNK // support.size)
        for start in range(0, pts.shape[0], chunk):
            phase = pts[start:start + chunk] @ lambdas.T
            out[start:start + chunk] = np.exp(1j * phase) @ coeffs

    if f.is_real:
        out = out.real
    if not vector:
        out = out[:, 0]
    return out[0] if single else out


# -------------------------------------------------------------------------
# Products
# -------------------------------------------------------------------------


def _direct_convolution(ms: ModeSet, a: np.ndarray, b: np.ndarray, ia: np.ndarray, ib: np.ndarray) -> np.ndarray:
    sums = ms.modes[ia][:, None, :] + ms.modes[ib][None, :, :]
    inside = np.all(np.abs(sums) <= ms.K, axis=-1)
    products = a[ia][:, None] * b[ib][None, :]
    out = np.zeros(ms.size, dtype=complex)
    if np.any(inside):
        np.add.at(out, ms.index_of(sums[inside]), products[inside])
    return out


def _dense_convolution(ms: ModeSet, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # 'same' keeps the centred (2K+1)^M block of the full (4K+1)^M result,
    # i.e. exactly the pair sums that land inside the box
    full = fftconvolve(a.reshape(ms.shape), b.reshape(ms.shape), mode="same")
    return full.reshape(-1)


def convolve_coefficients(ms: ModeSet, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Galerkin product of two flat coefficient arrays (pair sums outside the box dropped)"""
    ia = np.flatnonzero(a)
    ib = np.flatnonzero(b)
    if ia.size == 0 or ib.size == 0:
        return np.zeros(ms.size, dtype=complex)
    if ia.size * ib.size <= DIRECT_PAIR_LIMIT:
        return _direct_convolution(ms, a, b, ia, ib)
    return _dense_convolution(ms, a, b)


def multiply(f: QPScalar, g: QPScalar) -> QPScalar:
    """(fg)^_m = Σ_{m'+m''=m} f̂_{m'} ĝ_{m''}, restricted to the box"""
    _same_modes(f.modes, g.modes)
    return QPScalar(f.modes, convolve_coefficients(f.modes, f.coeffs, g.coeffs), f.is_real and g.is_real)


def dot(u: QPVectorField, w: QPVectorField) -> QPScalar:
    """Pointwise Euclidean product Σ_j u_j w_j"""
    _same_modes(u.modes, w.modes)
    total = np.zeros(u.modes.size, dtype=complex)
    for j in range(u.modes.n):
        total += convolve_coefficients(u.modes, u.coeffs[j], w.coeffs[j])
    return QPScalar(u.modes, total, u.is_real and w.is_real)


# -------------------------------------------------------------------------
# Calculus
# -------------------------------------------------------------------------


def derivative_symbol(ms: ModeSet, beta: Sequence[int]) -> np.ndarray:
    """(iΛ_m)^β = Π_j (iΛ_{m,j})^{β_j}"""
    beta = tuple(int(b) for b in beta)
    if len(beta) != ms.n or min(beta) < 0:
        raise ValueError(f"beta must be a nonnegative multi-index of length {ms.n}")
    symbol = np.ones(ms.size, dtype=complex)
    for j, order in enumerate(beta):
        if order:
            symbol = symbol * (1j * ms.lambdas[:, j]) ** order
    return symbol


def partial_derivative(f: Field, beta: Sequence[int]) -> Field:
    symbol = derivative_symbol(f.modes, beta)
    return f._like(f.coeffs * symbol)


def _unit(ms: ModeSet, j: int) -> Tuple[int, ...]:
    beta = [0] * ms.n
    beta[j] = 1
    return tuple(beta)


def gradient(f: QPScalar) -> QPVectorField:
    ms = f.modes
    return QPVectorField(ms, 1j * ms.lambdas.T * f.coeffs[None, :], f.is_real)


def divergence(u: QPVectorField) -> QPScalar:
    ms = u.modes
    return QPScalar(ms, np.sum(1j * ms.lambdas.T * u.coeffs, axis=0), u.is_real)


def jacobian(u: QPVectorField) -> List[List[QPScalar]]:
    """[du]_{jk} = ∂_k u_j"""
    ms = u.modes
    return [[partial_derivative(u[j], _unit(ms, k)) for k in range(ms.n)] for j in range(ms.n)]


def laplacian(f: Field) -> Field:
    return f._like(-f.modes.lambda_sq * f.coeffs)


def translate(f: Field, c: Sequence[float]) -> Field:
    """The shift x -> f(x + c): coefficients e^{i(Λ_m, c)} f̂_m"""
    phase = np.exp(1j * (f.modes.lambdas @ np.asarray(c, dtype=float)))
    return f._like(f.coeffs * phase)


# -------------------------------------------------------------------------
# Norms and pairings
# -------------------------------------------------------------------------


def norm_weights(ms: ModeSet, p: NormParams) -> np.ndarray:
    m_sq = np.einsum("ij,ij->i", ms.modes, ms.modes).astype(float)
    return (1.0 + ms.lambda_sq) ** p.l * (1.0 + m_sq) ** p.s


def norm(f: Field, p: NormParams) -> float:
    """||f||_{l,s} = (Σ |f̂_m|² ⟨Λ_m⟩^{2l} ⟨m⟩^{2s})^{1/2}, summed over components"""
    p.validate(f.modes.M)
    power = np.abs(f.coeffs) ** 2
    if power.ndim == 2:
        power = power.sum(axis=0)
    return float(np.sqrt(np.sum(power * norm_weights(f.modes, p))))


def derivative_sum_norm(f: QPScalar, p: NormParams) -> float:
    """(Σ_{|β|<=l} ||∂^β f||²_{0,s})^{1/2}: the derivative-sum form of the same norm"""
    base = NormParams(0, p.s)
    total = 0.0
    for beta in _multi_indices(f.modes.n, p.l):
        total += norm(partial_derivative(f, beta), base) ** 2
    return float(np.sqrt(total))


def _multi_indices(n: int, order: int) -> Iterable[Tuple[int, ...]]:
    if n == 1:
        for k in range(order + 1):
            yield (k,)
        return
    for first in range(order + 1):
        for rest in _multi_indices(n - 1, order - first):
            yield (first,) + rest


def besicovitch_inner(f: Field, g: Field) -> float:
    """(f, g)_0 = Σ f̂_m · conj(ĝ_m); real for real fields"""
    _same_modes(f.modes, g.modes)
    return float(np.real(np.sum(f.coeffs * np.conj(g.coeffs))))


def complex_pairing(g: QPScalar, h: QPScalar) -> complex:
    """⟨g, h⟩_0 = Σ ĝ_m ĥ_{-m}: the large-box average of the product g h"""
    _same_modes(g.modes, h.modes)
    return complex(np.sum(g.coeffs * h.coeffs[g.modes.negation_index()]))


def averaged_energy(u: QPVectorField) -> float:
    """E(u) = ½ (u, u)_0"""
    return 0.5 * besicovitch_inner(u, u)


def mean_square(f: Field) -> float:
    """||f||_0 with all weights one"""
    return float(np.sqrt(np.sum(np.abs(f.coeffs) ** 2)))


# -------------------------------------------------------------------------
# Box-average oracle
# -------------------------------------------------------------------------


@dataclass(frozen=True)
class BoxAverage:
    value: complex
    points_per_period: float
    resolved: bool


_PANEL_NODES = 16


def _panel_quadrature(T: float, quad_points: int) -> Tuple[np.ndarray, np.ndarray]:
    panels = max(1, int(np.ceil(quad_points / _PANEL_NODES)))
    nodes, weights = np.polynomial.legendre.leggauss(_PANEL_NODES)
    edges = np.linspace(-T, T, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    x = (mid[:, None] + half[:, None] * nodes[None, :]).reshape(-1)
    w = (half[:, None] * weights[None, :]).reshape(-1)
    return x, w


def box_average(f: QPScalar, mode: Sequence[int], T: float, quad_points: int) -> BoxAverage:
    """
    Numerical (2T)^{-n} ∫_{[-T,T]^n} f(x) e^{-i(Λ_m, x)} dx.

    Each term of f times the conjugate exponential is a product of one-dimensional
    exponentials, so the n-dimensional integral is evaluated as a product of
    composite Gauss-Legendre rules with quad_points nodes per axis.
    """
    if T <= 0:
        raise ValueError("T must be positive")
    ms = f.modes
    target = ms.lambdas[int(ms.index_of(mode))]
    support = f.support
    kappa = ms.lambdas[support] - target[None, :]

    max_freq = float(np.abs(kappa).max(initial=0.0))
    per_period = np.inf if max_freq == 0 else quad_points * (2 * np.pi / max_freq) / (2 * T)
    resolved = per_period >= 8
    if not resolved:
        logger.warning("Box average under-resolved: %.2f quadrature points per shortest period (< 8)",
                       per_period)

    x, w = _panel_quadrature(T, quad_points)
    value = 0.0 + 0.0j
    for c, k in zip(f.coeffs[support], kappa):
        factor = c
        for kj in k:
            factor *= np.sum(w * np.exp(1j * kj * x)) / (2 * T)
        value += factor
    return BoxAverage(value=complex(value), points_per_period=float(per_period), resolved=bool(resolved))


def box_average_coefficient(f: QPScalar, mode: Sequence[int], T: float, quad_points: int) -> complex:
    return box_average(f, mode, T, quad_points).value
