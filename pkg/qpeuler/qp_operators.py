"""
Operators of the pressure construction: Π_• / Π_∞, the inverse Laplacian on
the infinity block, the Δ^{-1}∂_j∂_k family, the nonlinearities D and Q, the
pressure-gradient operator 𝒫 and pressure recovery.
"""

import logging
import weakref
from dataclasses import dataclass

import numpy as np

from .errors import BulletSupportError, ResonanceError
from .freq_lattice import ModeSet
from .qp_field import (
    QPScalar,
    QPVectorField,
    convolve_coefficients,
    gradient,
    jacobian,
)

logger = logging.getLogger(__name__)

# |Λ_m| below this at m != 0 means the non-resonance assumption is violated
RESONANCE_FLOOR = 1e-12

# bullet-block coefficients above this make inv_laplace_infty refuse its input
BULLET_LEAK_TOL = 1e-14


@dataclass(frozen=True, eq=False)
class MultiplierTable:
    """Per-mode symbols shared by every operator on one ModeSet"""
    lambda_sq: np.ndarray
    bullet: np.ndarray
    inv_laplace_infty: np.ndarray   # -1/|Λ_m|² on I_∞, 0 on I_•
    grad_div: np.ndarray            # (n, n, size): Λ_j Λ_k / |Λ_m|², 0 at m = 0
    resonant: np.ndarray            # m != 0 with |Λ_m| < RESONANCE_FLOOR
    resonant_mode: object = None


_TABLES: "weakref.WeakKeyDictionary[ModeSet, MultiplierTable]" = weakref.WeakKeyDictionary()


def multiplier_table(ms: ModeSet) -> MultiplierTable:
    table = _TABLES.get(ms)
    if table is not None:
        return table

    lambda_sq = ms.lambda_sq
    infinity = ~ms.bullet_mask
    inv_lap = np.zeros(ms.size)
    inv_lap[infinity] = -1.0 / lambda_sq[infinity]

    nonzero = np.ones(ms.size, dtype=bool)
    nonzero[ms.zero_index] = False
    resonant = nonzero & (ms.lambda_norm < RESONANCE_FLOOR)
    resonant_mode = tuple(ms.modes[np.flatnonzero(resonant)[0]].tolist()) if resonant.any() else None

    safe = np.where(nonzero & ~resonant, lambda_sq, 1.0)
    grad_div = np.einsum("ij,ik->jki", ms.lambdas, ms.lambdas) / safe[None, None, :]
    grad_div[:, :, ~nonzero] = 0.0
    grad_div[:, :, resonant] = 0.0

    for arr in (inv_lap, grad_div, resonant):
        arr.setflags(write=False)

    table = MultiplierTable(
        lambda_sq=lambda_sq,
        bullet=ms.bullet_mask,
        inv_laplace_infty=inv_lap,
        grad_div=grad_div,
        resonant=resonant,
        resonant_mode=resonant_mode,
    )
    _TABLES[ms] = table
    return table


def _check_resonance(table: MultiplierTable, coeffs: np.ndarray) -> None:
    """Raise when the input excites a nonzero mode whose exponent vanishes"""
    if table.resonant_mode is None:
        return
    if np.any(np.atleast_2d(coeffs)[:, table.resonant] != 0):
        raise ResonanceError(
            f"mode {table.resonant_mode} has |Λ_m| < {RESONANCE_FLOOR}: non-resonance violated",
            mode=table.resonant_mode,
        )


# -------------------------------------------------------------------------
# Projections and inverse Laplacians
# -------------------------------------------------------------------------


def project_bullet(f):
    """Keep modes with |Λ_m| <= 1"""
    return f._like(np.where(f.modes.bullet_mask, f.coeffs, 0.0))


def project_infty(f):
    """Keep modes with |Λ_m| > 1"""
    return f._like(np.where(f.modes.bullet_mask, 0.0, f.coeffs))


def inv_laplace_infty(f):
    """Δ^{-1} on the infinity block: f̂_m -> -f̂_m / |Λ_m|²"""
    table = multiplier_table(f.modes)
    leak = np.abs(np.atleast_2d(f.coeffs)[:, table.bullet])
    if leak.size and leak.max() > BULLET_LEAK_TOL:
        raise BulletSupportError(
            f"input has bullet-block coefficients up to {leak.max():.3e}; project_infty first"
        )
    return f._like(f.coeffs * table.inv_laplace_infty)


def inv_laplace_grad_div(w: QPVectorField) -> QPVectorField:
    """Δ^{-1}∇Div: component j gets Σ_k Λ_{m,j} Λ_{m,k} / |Λ_m|² ŵ_{k,m}; zero at m = 0"""
    table = multiplier_table(w.modes)
    _check_resonance(table, w.coeffs)
    return w._like(np.einsum("jki,ki->ji", table.grad_div, w.coeffs))


def inv_laplace_partial(f: QPScalar, j: int, k: int) -> QPScalar:
    """Δ^{-1}∂_j∂_k on a scalar"""
    table = multiplier_table(f.modes)
    _check_resonance(table, f.coeffs)
    return f._like(table.grad_div[j, k] * f.coeffs)


def leray_project(w: QPVectorField) -> QPVectorField:
    """w - Δ^{-1}∇Div w: the divergence-free part of w"""
    return w - inv_laplace_grad_div(w)


# -------------------------------------------------------------------------
# Nonlinearities
# -------------------------------------------------------------------------


def advect(w: QPVectorField) -> QPVectorField:
    """D(w) = w·∇w, component j = Σ_k w_k ∂_k w_j"""
    ms = w.modes
    grads = [gradient(w[j]) for j in range(ms.n)]
    out = np.zeros((ms.n, ms.size), dtype=complex)
    for j in range(ms.n):
        for k in range(ms.n):
            out[j] += convolve_coefficients(ms, w.coeffs[k], grads[j].coeffs[k])
    return QPVectorField(ms, out, w.is_real)


def quadratic(w: QPVectorField) -> QPScalar:
    """Q(w) = tr([dw]²) = Σ_{j,k} ∂_j w_k ∂_k w_j"""
    ms = w.modes
    dw = jacobian(w)
    total = np.zeros(ms.size, dtype=complex)
    for j in range(ms.n):
        total += convolve_coefficients(ms, dw[j][j].coeffs, dw[j][j].coeffs)
        for k in range(j + 1, ms.n):
            # [dw]_{kj}[dw]_{jk} appears twice
            total += 2.0 * convolve_coefficients(ms, dw[k][j].coeffs, dw[j][k].coeffs)
    return QPScalar(ms, total, w.is_real)


# -------------------------------------------------------------------------
# Pressure
# -------------------------------------------------------------------------


def pressure_gradient(w: QPVectorField) -> QPVectorField:
    """
    𝒫(w) = (Δ^{-1}∘Π_∞)∘∇∘Q(w) + (Δ^{-1}∘∇∘Div)∘Π_•∘D(w)

    Equal to -∇p for divergence-free w; both summands have zero mean.
    """
    infinity_part = inv_laplace_infty(project_infty(gradient(quadratic(w))))
    bullet_part = inv_laplace_grad_div(project_bullet(advect(w)))
    return infinity_part + bullet_part


def pressure_recover(u: QPVectorField) -> QPScalar:
    """
    Zero-mean pressure p = -Σ_{j,k} Δ^{-1}∂_j∂_k (u_k u_j).

    The sign follows from -Δp = Σ ∂_j∂_k(u_k u_j), so that ∇p = -𝒫(u) for
    divergence-free u.
    """
    ms = u.modes
    table = multiplier_table(ms)
    total = np.zeros(ms.size, dtype=complex)
    for j in range(ms.n):
        for k in range(j, ms.n):
            product = convolve_coefficients(ms, u.coeffs[k], u.coeffs[j])
            _check_resonance(table, product)
            weight = 1.0 if j == k else 2.0
            total -= weight * table.grad_div[j, k] * product
    return QPScalar(ms, total, u.is_real)
