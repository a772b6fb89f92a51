"""
Initial velocity fields: named presets and explicit mode lists.
"""

import logging
from typing import List, Tuple

import numpy as np

from .freq_lattice import ModeSet
from .models import InitialDataReport, InitialDataSpec
from .qp_field import NormParams, QPScalar, QPVectorField, mean_square, multiply, norm, partial_derivative
from .qp_operators import leray_project

logger = logging.getLogger(__name__)

# Λ components below this count as zero when searching for preset modes
_LAMBDA_TOL = 1e-9


def _positive_modes(ms: ModeSet, mask: np.ndarray) -> List[int]:
    """Indices of the masked modes with one representative per ± pair"""
    idx = np.flatnonzero(mask)
    return [int(i) for i in idx if i > ms.zero_index]


def _cos(ms: ModeSet, i: int) -> QPScalar:
    return QPScalar.from_modes(ms, {tuple(ms.modes[i].tolist()): 0.5})


def _sin(ms: ModeSet, i: int) -> QPScalar:
    return QPScalar.from_modes(ms, {tuple(ms.modes[i].tolist()): -0.5j})


def shear_field(ms: ModeSet, amplitude: float = 0.1) -> QPVectorField:
    """
    u = (g, 0, ..., 0) with g built from modes whose Λ has zero first component,
    so g does not depend on x1. Such fields are steady solutions.
    """
    flat = (np.abs(ms.lambdas[:, 0]) < _LAMBDA_TOL) & (ms.lambda_norm > _LAMBDA_TOL)
    candidates = _positive_modes(ms, flat)
    if not candidates:
        raise ValueError("no mode with Λ_1 = 0 in the box: this Ω admits no shear preset")
    candidates.sort(key=lambda i: (ms.lambda_norm[i], i))

    g = _cos(ms, candidates[0]) * amplitude
    if len(candidates) > 1:
        g = g + _sin(ms, candidates[1]) * (0.5 * amplitude)
    comps = [g] + [QPScalar.zeros(ms) for _ in range(ms.n - 1)]
    return QPVectorField.from_components(comps)


def _axis_mode(ms: ModeSet, axis: int) -> int:
    target = np.zeros(ms.n)
    target[axis] = 2 * np.pi
    hits = np.flatnonzero(np.all(np.abs(ms.lambdas - target[None, :]) < _LAMBDA_TOL, axis=1))
    if hits.size == 0:
        raise ValueError(f"no mode with Λ = 2π e_{axis + 1} in the box")
    return int(hits[0])


def taylor_green_field(ms: ModeSet, amplitude: float = 0.1) -> QPVectorField:
    """u = A (sin X1 cos X2, -cos X1 sin X2) with X = 2πx; n = 2 only"""
    if ms.n != 2:
        raise ValueError("taylor_green needs n = 2")
    a, b = _axis_mode(ms, 0), _axis_mode(ms, 1)
    u1 = multiply(_sin(ms, a), _cos(ms, b)) * amplitude
    u2 = multiply(_cos(ms, a), _sin(ms, b)) * (-amplitude)
    return QPVectorField.from_components([u1, u2])


def quasipattern_field(ms: ModeSet, amplitude: float = 0.1) -> QPVectorField:
    """
    Rotated gradient of ψ = (A / 2π) Σ cos(Λ_m·x) over the wave vectors of
    length 2π among the modes with |m|_inf <= 1; divergence-free, n = 2 only.
    """
    if ms.n != 2:
        raise ValueError("quasipattern needs n = 2")
    small = np.all(np.abs(ms.modes) <= 1, axis=1)
    on_circle = small & (np.abs(ms.lambda_norm - 2 * np.pi) < _LAMBDA_TOL)
    waves = _positive_modes(ms, on_circle)
    if not waves:
        raise ValueError("no wave vector of length 2π among the modes with |m|_inf <= 1")
    psi = QPScalar.zeros(ms)
    for i in waves:
        psi = psi + _cos(ms, i) * 2.0
    psi = psi * (amplitude / (2 * np.pi))
    logger.debug("Quasipattern preset on %d wave vectors", len(waves))
    return QPVectorField.from_components([partial_derivative(psi, (0, 1)), -partial_derivative(psi, (1, 0))])


def random_divfree_field(ms: ModeSet, seed: int = 0, sub_box: int = 2, target_norm: float = 0.1,
                         p: NormParams = None) -> QPVectorField:
    """Gaussian coefficients on |m|_inf <= sub_box, symmetrized, Leray-projected, rescaled to ||u||_{0,s}"""
    rng = np.random.default_rng(seed)
    p = p if p is not None else NormParams(0, ms.M / 2 + 1)
    sub = min(sub_box, ms.K)
    inside = np.all(np.abs(ms.modes) <= sub, axis=1)
    inside[ms.zero_index] = False
    coeffs = np.zeros((ms.n, ms.size), dtype=complex)
    count = int(inside.sum())
    coeffs[:, inside] = rng.standard_normal((ms.n, count)) + 1j * rng.standard_normal((ms.n, count))
    u = leray_project(QPVectorField(ms, coeffs))
    if target_norm is None:
        return u
    size = norm(u, NormParams(0, p.s))
    if size == 0:
        raise ValueError("random draw projected to zero; enlarge sub_box")
    return u * (target_norm / size)


def explicit_field(ms: ModeSet, spec: InitialDataSpec) -> QPVectorField:
    entries = {}
    for item in spec.modes:
        if len(item.mode) != ms.M:
            raise ValueError(f"mode {item.mode} must have {ms.M} entries")
        if len(item.value) != ms.n:
            raise ValueError(f"mode {item.mode} needs {ms.n} components, got {len(item.value)}")
        entries[tuple(item.mode)] = [complex(re, im) for re, im in item.value]
    return QPVectorField.from_modes(ms, entries)


def build_initial_data(spec: InitialDataSpec, ms: ModeSet, p: NormParams = None) -> Tuple[QPVectorField, InitialDataReport]:
    """Build the configured field and, if requested, project it onto divergence-free fields"""
    if spec.modes is not None:
        u = explicit_field(ms, spec)
    elif spec.preset == "shear":
        u = shear_field(ms, spec.amplitude)
    elif spec.preset == "taylor_green":
        u = taylor_green_field(ms, spec.amplitude)
    elif spec.preset == "quasipattern":
        u = quasipattern_field(ms, spec.amplitude)
    else:
        u = random_divfree_field(ms, spec.seed, spec.sub_box, spec.target_norm, p)

    delta = 0.0
    if spec.leray_project:
        projected = leray_project(u)
        delta = mean_square(u - projected)
        u = projected
        if delta > 0:
            logger.info("Leray projection removed %.3e from the initial field", delta)

    report = InitialDataReport(preset=spec.preset, projection_delta=delta, support_size=int(u.support.size))
    return u, report
