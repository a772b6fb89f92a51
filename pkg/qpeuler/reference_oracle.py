"""
Independent reference implementations used to validate the spectral library:
a periodic vorticity-streamfunction Euler solver on [0, 1)², a brute-force
coefficient convolution and central finite differences.
"""

import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .errors import SolverAbort
from .qp_field import QPScalar, QPVectorField, evaluate, partial_derivative

logger = logging.getLogger(__name__)


# -------------------------------------------------------------------------
# Periodic pseudo-spectral oracle
# -------------------------------------------------------------------------


def wavenumbers(N: int) -> Tuple[np.ndarray, np.ndarray]:
    """k = 2π·m on the N×N dual grid, axis 0 along x1"""
    m = np.fft.fftfreq(N, d=1.0 / N)
    k = 2.0 * np.pi * m
    return k[:, None], k[None, :]


def dealias_mask(N: int) -> np.ndarray:
    """2/3 rule: keep |m_j| < N/3 on both axes"""
    m = np.abs(np.fft.fftfreq(N, d=1.0 / N))
    keep = m < N / 3
    return keep[:, None] & keep[None, :]


@dataclass(frozen=True)
class PeriodicField2D:
    """Vorticity on [0, 1)²: spectrum holds Fourier coefficients (forward-normalized FFT)"""
    spectrum: np.ndarray

    @property
    def N(self) -> int:
        return self.spectrum.shape[0]

    @property
    def values(self) -> np.ndarray:
        return np.real(np.fft.ifft2(self.spectrum, norm="forward"))

    @classmethod
    def from_values(cls, values: np.ndarray) -> "PeriodicField2D":
        return cls(np.fft.fft2(values, norm="forward"))


def velocity_spectra(w_hat: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """u = (∂2ψ, -∂1ψ) with ψ̂ = ω̂/|k|²"""
    kx, ky = wavenumbers(w_hat.shape[0])
    k_sq = kx * kx + ky * ky
    k_sq[0, 0] = 1.0
    psi_hat = w_hat / k_sq
    psi_hat[0, 0] = 0.0
    return 1j * ky * psi_hat, -1j * kx * psi_hat


def vorticity_spectrum(u1_hat: np.ndarray, u2_hat: np.ndarray) -> np.ndarray:
    """ω = ∂1 u2 - ∂2 u1"""
    kx, ky = wavenumbers(u1_hat.shape[0])
    return 1j * kx * u2_hat - 1j * ky * u1_hat


def vorticity_rhs(w_hat: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """-u·∇ω, products in physical space, result truncated by the 2/3 rule"""
    kx, ky = wavenumbers(w_hat.shape[0])
    u1_hat, u2_hat = velocity_spectra(w_hat)
    u1 = np.real(np.fft.ifft2(u1_hat, norm="forward"))
    u2 = np.real(np.fft.ifft2(u2_hat, norm="forward"))
    wx = np.real(np.fft.ifft2(1j * kx * w_hat, norm="forward"))
    wy = np.real(np.fft.ifft2(1j * ky * w_hat, norm="forward"))
    rhs = np.fft.fft2(-(u1 * wx + u2 * wy), norm="forward")
    rhs[~mask] = 0.0
    return rhs


def rk4_step(w_hat: np.ndarray, dt: float, mask: np.ndarray) -> np.ndarray:
    k1 = vorticity_rhs(w_hat, mask)
    k2 = vorticity_rhs(w_hat + dt * k1 / 2, mask)
    k3 = vorticity_rhs(w_hat + dt * k2 / 2, mask)
    k4 = vorticity_rhs(w_hat + dt * k3, mask)
    return w_hat + (k1 + 2 * k2 + 2 * k3 + k4) * dt / 6


def periodic_euler_2d(w0_hat: np.ndarray, dt: float, t_end: float) -> np.ndarray:
    """
    Evolve the vorticity spectrum from 0 to t_end with dealiased RK4.

    Args:
        w0_hat: N×N vorticity coefficients, N a power of two
        dt: time step (the last step is trimmed to land on t_end)
        t_end: final time

    Returns:
        Vorticity coefficients at t_end
    """
    w_hat = np.array(w0_hat, dtype=complex)
    N = w_hat.shape[0]
    if w_hat.shape != (N, N) or N < 4 or N & (N - 1):
        raise ValueError(f"vorticity spectrum must be N×N with N a power of two, got {w_hat.shape}")
    mask = dealias_mask(N)
    w_hat[~mask] = 0.0

    steps = int(np.floor(t_end / dt + 1e-9))
    sizes = [dt] * steps
    leftover = t_end - steps * dt
    if leftover > 1e-12 * max(1.0, t_end):
        sizes.append(leftover)

    for i, h in enumerate(sizes):
        w_hat = rk4_step(w_hat, h, mask)
        if not np.all(np.isfinite(w_hat)):
            raise SolverAbort(f"oracle produced non-finite vorticity at step {i + 1}")
    logger.debug("Oracle run: N=%d steps=%d", N, len(sizes))
    return w_hat


def oracle_energy(w_hat: np.ndarray) -> float:
    u1_hat, u2_hat = velocity_spectra(w_hat)
    return float(0.5 * np.sum(np.abs(u1_hat) ** 2 + np.abs(u2_hat) ** 2))


def oracle_enstrophy(w_hat: np.ndarray) -> float:
    return float(0.5 * np.sum(np.abs(w_hat) ** 2))


def _check_periodic(u: QPVectorField) -> None:
    ms = u.modes
    if ms.M != 2 or ms.n != 2 or not np.allclose(ms.omega.entries, np.eye(2), atol=0.0):
        raise ValueError("the periodic oracle needs Ω = I_2")


def vorticity_from_field(u: QPVectorField, N: int) -> np.ndarray:
    """N×N vorticity spectrum of a field on Ω = I_2 (box modes placed at m mod N)"""
    _check_periodic(u)
    ms = u.modes
    if 2 * ms.K + 1 > N:
        raise ValueError(f"N={N} cannot hold the box K={ms.K}")
    u1 = np.zeros((N, N), dtype=complex)
    u2 = np.zeros((N, N), dtype=complex)
    pos = tuple((ms.modes % N).T)
    u1[pos] = u.coeffs[0]
    u2[pos] = u.coeffs[1]
    return vorticity_spectrum(u1, u2)


def velocity_coefficients(w_hat: np.ndarray, u: QPVectorField) -> np.ndarray:
    """Oracle velocity coefficients at the box modes of u, shape (2, size)"""
    _check_periodic(u)
    N = w_hat.shape[0]
    u1_hat, u2_hat = velocity_spectra(w_hat)
    pos = tuple((u.modes.modes % N).T)
    return np.stack([u1_hat[pos], u2_hat[pos]])


# -------------------------------------------------------------------------
# Brute-force convolution and finite differences
# -------------------------------------------------------------------------


def brute_force_convolution(f: QPScalar, g: QPScalar) -> QPScalar:
    """Galerkin product by an explicit loop over all target and source modes"""
    ms = f.modes
    if g.modes is not ms:
        raise ValueError("operands are defined on different ModeSet instances")
    out = np.zeros(ms.size, dtype=complex)
    f_support = f.support
    for target in range(ms.size):
        m = ms.modes[target]
        acc = 0.0 + 0.0j
        for i in f_support:
            rest = m - ms.modes[i]
            if np.all(np.abs(rest) <= ms.K):
                acc += f.coeffs[i] * g.coeffs[int(ms.index_of(rest))]
        out[target] = acc
    return QPScalar(ms, out, f.is_real and g.is_real)


def finite_difference_check(f: QPScalar, j: int, x, h: float) -> float:
    """
    |central difference - evaluate(∂_j f, x)| / scale, scale = max(|∂_j f(x)|, Σ|Λ_{m,j} f̂_m|).

    Expected to be O(h²); exactly zero for constants.
    """
    ms = f.modes
    x = np.asarray(x, dtype=float)
    e = np.zeros(ms.n)
    e[j] = h
    beta = [0] * ms.n
    beta[j] = 1
    exact = evaluate(partial_derivative(f, beta), x)
    approx = (evaluate(f, x + e) - evaluate(f, x - e)) / (2 * h)
    scale = max(abs(exact), float(np.sum(np.abs(ms.lambdas[:, j] * f.coeffs))))
    err = abs(approx - exact)
    return float(err / scale) if scale > 0 else float(err)
