"""
Frequency lattice: the map Ω : R^n -> R^M, the truncated mode box, the
exponents Λ_m = 2π Ω^T m and the bullet / infinity classification.
"""

import logging
import os
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import ModeBudgetError, NonUnitOmegaError, RankDeficientOmegaError
from .models import ModeSetSummary, NonresonanceReport

logger = logging.getLogger(__name__)

MODE_BUDGET = int(os.getenv("QPEULER_MODE_BUDGET", "10000000"))

# |Λ_m| <= BULLET_RADIUS puts m into I_•
BULLET_RADIUS = 1.0


@dataclass(frozen=True, eq=False)
class FrequencyMatrix:
    """Linear map Ω as an M×n matrix of full column rank n"""
    entries: np.ndarray

    def __post_init__(self):
        entries = np.array(self.entries, dtype=float)
        if entries.ndim != 2:
            raise RankDeficientOmegaError(f"Ω must be a 2-d matrix, got shape {entries.shape}")
        M, n = entries.shape
        if n < 1 or M < n:
            raise RankDeficientOmegaError(f"Ω must satisfy M >= n >= 1, got M={M}, n={n}")
        singular = np.linalg.svd(entries, compute_uv=False)
        if singular[-1] <= 1e-12 * singular[0]:
            raise RankDeficientOmegaError(
                f"Ω has rank < {n} (singular values {singular.tolist()})"
            )
        entries.setflags(write=False)
        object.__setattr__(self, "entries", entries)

    @property
    def M(self) -> int:
        return self.entries.shape[0]

    @property
    def n(self) -> int:
        return self.entries.shape[1]

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Ω(x) for x of shape (..., n)"""
        return np.asarray(x, dtype=float) @ self.entries.T


@dataclass(frozen=True, eq=False)
class ModeSet:
    """
    Symmetric max-norm box {m in Z^M : |m|_inf <= K} with cached exponents.

    Modes are stored in lexicographic order, which is also the C-order
    flattening of a (2K+1)^M array indexed by m + K. Because the box is
    symmetric, the mode -m sits at position size - 1 - index(m).
    """
    omega: FrequencyMatrix
    K: int
    modes: np.ndarray = field(repr=False)
    lambdas: np.ndarray = field(repr=False)
    bullet_mask: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.omega.n

    @property
    def M(self) -> int:
        return self.omega.M

    @property
    def size(self) -> int:
        return self.modes.shape[0]

    @property
    def shape(self) -> tuple:
        return (2 * self.K + 1,) * self.M

    @property
    def zero_index(self) -> int:
        return self.size // 2

    @cached_property
    def lambda_sq(self) -> np.ndarray:
        return np.einsum("ij,ij->i", self.lambdas, self.lambdas)

    @cached_property
    def lambda_norm(self) -> np.ndarray:
        return np.sqrt(self.lambda_sq)

    def contains(self, m: np.ndarray) -> np.ndarray:
        m = np.asarray(m)
        return np.all(np.abs(m) <= self.K, axis=-1)

    def index_of(self, m) -> np.ndarray:
        """Flat position(s) of mode(s) m, shape (..., M) -> (...)"""
        m = np.asarray(m, dtype=np.int64)
        if not np.all(self.contains(m)):
            raise IndexError(f"mode outside the box |m|_inf <= {self.K}")
        return np.ravel_multi_index(tuple(np.moveaxis(m + self.K, -1, 0)), self.shape)

    def negation_index(self) -> np.ndarray:
        return np.arange(self.size - 1, -1, -1)


def build_mode_set(omega: FrequencyMatrix, K: int, budget: Optional[int] = None) -> ModeSet:
    """
    Enumerate the full symmetric box and precompute Λ_m and the bullet flags

    Args:
        omega: frequency matrix
        K: truncation radius
        budget: max number of modes (defaults to QPEULER_MODE_BUDGET)

    Returns:
        Immutable ModeSet
    """
    if K < 1:
        raise ValueError(f"K must be a positive integer, got {K}")
    budget = MODE_BUDGET if budget is None else budget
    size = (2 * K + 1) ** omega.M
    if size > budget:
        raise ModeBudgetError(
            f"(2K+1)^M = {size} modes exceeds the budget of {budget} (K={K}, M={omega.M})"
        )

    shape = (2 * K + 1,) * omega.M
    modes = np.indices(shape).reshape(omega.M, -1).T - K
    modes = np.ascontiguousarray(modes, dtype=np.int64)
    lambdas = 2.0 * np.pi * (modes @ omega.entries)
    bullet_mask = np.einsum("ij,ij->i", lambdas, lambdas) <= BULLET_RADIUS ** 2

    for arr in (modes, lambdas, bullet_mask):
        arr.setflags(write=False)

    ms = ModeSet(omega=omega, K=K, modes=modes, lambdas=lambdas, bullet_mask=bullet_mask)
    logger.debug("Built mode set: M=%d n=%d K=%d size=%d bullet=%d",
                 omega.M, omega.n, K, size, int(bullet_mask.sum()))
    return ms


def check_nonresonance(ms: ModeSet, tol: float = 1e-9) -> NonresonanceReport:
    """
    Truncated non-resonance check: no two distinct modes may share Λ within tol.

    Passing is necessary, not sufficient, for the full condition on Z^M.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")

    tree = cKDTree(ms.lambdas)
    dist, idx = tree.query(ms.lambdas, k=2)
    own = np.arange(ms.size)
    # exact duplicates may come back in either order
    neighbor = np.where(idx[:, 0] == own, idx[:, 1], idx[:, 0])
    separation = dist[:, 1]

    first = int(np.argmin(separation))
    min_sep = float(separation[first])
    ok = min_sep >= tol

    worst_pair = None
    if not ok:
        a, b = sorted((first, int(neighbor[first])))
        worst_pair = (ms.modes[a].tolist(), ms.modes[b].tolist())
        logger.warning("Non-resonance check failed: Λ%s ≈ Λ%s (separation %.3e)",
                       worst_pair[0], worst_pair[1], min_sep)

    return NonresonanceReport(
        ok=ok,
        tol=tol,
        modes_checked=ms.size,
        min_separation=min_sep,
        worst_pair=worst_pair,
    )


def canonical_omega(n: int, omega_vec: Sequence[float]) -> FrequencyMatrix:
    """
    The (n+1)×n matrix [I_n ; ω^T].

    With (ω_1, ..., ω_n, 1) rationally independent the translation lattice is
    trivial; rational independence is the caller's responsibility.
    """
    w = np.asarray(omega_vec, dtype=float).reshape(-1)
    if w.size != n:
        raise ValueError(f"omega_vec must have {n} entries, got {w.size}")
    if abs(np.linalg.norm(w) - 1.0) > 1e-12:
        raise NonUnitOmegaError(f"|ω| must be 1 within 1e-12, got {np.linalg.norm(w)!r}")
    return FrequencyMatrix(np.vstack([np.eye(n), w[None, :]]))


def identity_omega(n: int) -> FrequencyMatrix:
    """Ω = I_n: the periodic case on the unit torus"""
    return FrequencyMatrix(np.eye(n))


def twelvefold_omega() -> FrequencyMatrix:
    """
    4×2 quasipattern map: rows are the unit wave vectors at 0, π/6, π/3, π/2.

    The remaining wave vectors of the twelve-fold star are integer combinations
    of these rows, the map is non-resonant, and its translation lattice is {0}.
    """
    angles = np.array([0.0, np.pi / 6, np.pi / 3, np.pi / 2])
    rows = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    rows[3, 0] = 0.0
    return FrequencyMatrix(rows)


def is_lattice_translation(omega: FrequencyMatrix, gamma: Sequence[float], tol: float = 1e-12) -> bool:
    """True when Ωγ lies in Z^M, i.e. γ belongs to the translation lattice Γ_Ω"""
    image = omega.apply(np.asarray(gamma, dtype=float))
    return bool(np.all(np.abs(image - np.round(image)) <= tol))


def mode_set_summary(ms: ModeSet) -> ModeSetSummary:
    return ModeSetSummary(
        n=ms.n,
        M=ms.M,
        K=ms.K,
        size=ms.size,
        bullet_count=int(ms.bullet_mask.sum()),
        max_lambda=float(ms.lambda_norm.max()),
        omega=ms.omega.entries.tolist(),
    )
