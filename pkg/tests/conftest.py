import numpy as np
import pytest

from qpeuler.freq_lattice import build_mode_set, canonical_omega, identity_omega
from qpeuler.qp_field import QPScalar, QPVectorField
from qpeuler.qp_operators import leray_project

# (√2 - 1, √3 - 1) normalized: rationally independent together with 1
IRRATIONAL_OMEGA = np.array([np.sqrt(2) - 1, np.sqrt(3) - 1]) / np.linalg.norm([np.sqrt(2) - 1, np.sqrt(3) - 1])


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="module")
def periodic_modes():
    """Ω = I_2, K = 4"""
    return build_mode_set(identity_omega(2), 4)


@pytest.fixture(scope="module")
def canonical_modes():
    """Ω = [I_2; ω^T] with irrational ω, K = 2 (125 modes)"""
    return build_mode_set(canonical_omega(2, IRRATIONAL_OMEGA), 2)


def _random_coeffs(ms, rng, sub_box, comps):
    inside = np.all(np.abs(ms.modes) <= sub_box, axis=1)
    inside[ms.zero_index] = False
    coeffs = np.zeros((comps, ms.size), dtype=complex)
    count = int(inside.sum())
    coeffs[:, inside] = rng.standard_normal((comps, count)) + 1j * rng.standard_normal((comps, count))
    return coeffs


@pytest.fixture
def random_scalar(rng):
    """Factory: real scalar with Gaussian coefficients on |m|_inf <= sub_box, max |f̂| = scale"""
    def make(ms, sub_box=1, scale=0.1):
        coeffs = _random_coeffs(ms, rng, sub_box, 1)[0]
        f = QPScalar(ms, coeffs)
        return f * (scale / f.max_abs())
    return make


@pytest.fixture
def random_divfree(rng):
    """Factory: divergence-free real field on |m|_inf <= sub_box, max |û| = scale"""
    def make(ms, sub_box=1, scale=0.1):
        u = leray_project(QPVectorField(ms, _random_coeffs(ms, rng, sub_box, ms.n)))
        return u * (scale / u.max_abs())
    return make


@pytest.fixture
def random_field(rng):
    """Factory: real vector field (not projected) on |m|_inf <= sub_box, max |û| = scale"""
    def make(ms, sub_box=1, scale=0.1):
        u = QPVectorField(ms, _random_coeffs(ms, rng, sub_box, ms.n))
        return u * (scale / u.max_abs())
    return make
