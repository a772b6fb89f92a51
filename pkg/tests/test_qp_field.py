import logging

import numpy as np
import pytest

from qpeuler import qp_field
from qpeuler.errors import ModeSetMismatchError
from qpeuler.freq_lattice import build_mode_set, identity_omega
from qpeuler.qp_field import (
    NormParams,
    QPScalar,
    QPVectorField,
    averaged_energy,
    besicovitch_inner,
    box_average,
    box_average_coefficient,
    complex_pairing,
    derivative_sum_norm,
    divergence,
    dot,
    evaluate,
    gradient,
    jacobian,
    laplacian,
    multiply,
    norm,
    partial_derivative,
    translate,
)


def _cosine(ms, mode, amplitude=1.0):
    return QPScalar.from_modes(ms, {mode: 0.5 * amplitude})


class TestConstruction:
    def test_real_fields_are_hermitian(self, canonical_modes, random_scalar):
        f = random_scalar(canonical_modes, sub_box=2)
        rev = canonical_modes.negation_index()
        np.testing.assert_array_equal(f.coeffs[rev], np.conj(f.coeffs))

    def test_from_modes_mirrors(self, periodic_modes):
        f = QPScalar.from_modes(periodic_modes, {(1, 0): 0.5 - 0.25j})
        assert f.coefficient((-1, 0)) == 0.5 + 0.25j

    def test_coefficients_are_immutable(self, periodic_modes):
        f = _cosine(periodic_modes, (1, 0))
        with pytest.raises(ValueError):
            f.coeffs[0] = 1.0

    def test_mixing_mode_sets_is_rejected(self, periodic_modes):
        other = build_mode_set(identity_omega(2), 4)
        with pytest.raises(ModeSetMismatchError):
            _cosine(periodic_modes, (1, 0)) + _cosine(other, (1, 0))

    def test_shape_checked(self, periodic_modes):
        with pytest.raises(ValueError):
            QPScalar(periodic_modes, np.zeros(3))


class TestEvaluate:
    def test_cosine(self, periodic_modes, rng):
        f = _cosine(periodic_modes, (1, 0))
        x = rng.uniform(-5, 5, size=(50, 2))
        np.testing.assert_allclose(evaluate(f, x), np.cos(2 * np.pi * x[:, 0]), atol=1e-13)

    def test_single_point_returns_scalar(self, periodic_modes):
        f = _cosine(periodic_modes, (0, 1), 2.0)
        assert evaluate(f, [0.3, 0.0]) == pytest.approx(2.0)

    def test_real_field_is_real(self, canonical_modes, random_scalar, rng):
        f = random_scalar(canonical_modes)
        values = evaluate(f, rng.uniform(-3, 3, size=(10, 2)))
        assert values.dtype == float

    def test_vector_layout(self, periodic_modes):
        u = QPVectorField.from_modes(periodic_modes, {(1, 0): [0.5, 0.0], (0, 1): [0.0, 0.5]})
        values = evaluate(u, np.array([[0.0, 0.25], [0.5, 0.0]]))
        np.testing.assert_allclose(values, [[1.0, 0.0], [-1.0, 1.0]], atol=1e-14)


class TestProducts:
    def test_cosine_squared(self, periodic_modes):
        f = _cosine(periodic_modes, (1, 0))
        g = multiply(f, f)
        assert g.mean == pytest.approx(0.5)
        assert g.coefficient((2, 0)) == pytest.approx(0.25)
        assert g.support.size == 3

    def test_galerkin_truncation(self, periodic_modes):
        K = periodic_modes.K
        f = QPScalar.exponential(periodic_modes, (K, 0))
        g = QPScalar.exponential(periodic_modes, (1, 0))
        assert multiply(f, g).support.size == 0
        h = QPScalar.exponential(periodic_modes, (-1, 0))
        assert multiply(f, h).coefficient((K - 1, 0)) == 1.0

    def test_dense_and_direct_paths_agree(self, canonical_modes, random_scalar, monkeypatch):
        f = random_scalar(canonical_modes, sub_box=2)
        g = random_scalar(canonical_modes, sub_box=2)
        direct = multiply(f, g)
        monkeypatch.setattr(qp_field, "DIRECT_PAIR_LIMIT", 0)
        dense = multiply(f, g)
        np.testing.assert_allclose(dense.coeffs, direct.coeffs, rtol=0, atol=1e-13 * direct.max_abs())

    def test_product_matches_pointwise_when_in_box(self, periodic_modes, random_scalar, rng):
        f = random_scalar(periodic_modes, sub_box=2)
        g = random_scalar(periodic_modes, sub_box=2)
        x = rng.uniform(0, 1, size=(20, 2))
        np.testing.assert_allclose(evaluate(multiply(f, g), x), evaluate(f, x) * evaluate(g, x), atol=1e-13)

    def test_associative_when_nothing_is_truncated(self, random_scalar):
        ms = build_mode_set(identity_omega(2), 6)
        f, g, h = (random_scalar(ms, sub_box=2) for _ in range(3))
        left = multiply(multiply(f, g), h)
        right = multiply(f, multiply(g, h))
        np.testing.assert_allclose(left.coeffs, right.coeffs, rtol=0, atol=1e-13 * left.max_abs())

    def test_dot(self, periodic_modes, random_field):
        u = random_field(periodic_modes)
        w = random_field(periodic_modes)
        expected = multiply(u[0], w[0]) + multiply(u[1], w[1])
        np.testing.assert_allclose(dot(u, w).coeffs, expected.coeffs, atol=1e-15)

    def test_vector_times_scalar(self, periodic_modes, random_field, random_scalar):
        u = random_field(periodic_modes)
        f = random_scalar(periodic_modes)
        np.testing.assert_array_equal((u * f)[1].coeffs, multiply(u[1], f).coeffs)


class TestCalculus:
    def test_derivative_multiplier(self, canonical_modes, random_scalar):
        f = random_scalar(canonical_modes, sub_box=2)
        lam = canonical_modes.lambdas
        d = partial_derivative(f, (2, 1))
        expected = (1j * lam[:, 0]) ** 2 * (1j * lam[:, 1]) * f.coeffs
        np.testing.assert_allclose(d.coeffs, expected, rtol=1e-14, atol=1e-16)

    def test_divergence_of_gradient_is_laplacian(self, canonical_modes, random_scalar):
        f = random_scalar(canonical_modes, sub_box=2)
        np.testing.assert_allclose(divergence(gradient(f)).coeffs, laplacian(f).coeffs, rtol=1e-14, atol=1e-15)

    @pytest.mark.parametrize("beta", [(1, 0), (0, 1)])
    def test_leibniz_rule(self, canonical_modes, random_scalar, beta):
        f = random_scalar(canonical_modes, sub_box=2)
        g = random_scalar(canonical_modes, sub_box=2)
        lhs = partial_derivative(multiply(f, g), beta)
        rhs = multiply(partial_derivative(f, beta), g) + multiply(f, partial_derivative(g, beta))
        np.testing.assert_allclose(lhs.coeffs, rhs.coeffs, rtol=0, atol=1e-12 * lhs.max_abs())

    def test_jacobian_layout(self, periodic_modes):
        # u = (sin 2πx2, 0): only ∂_2 u_1 survives
        u = QPVectorField.from_modes(periodic_modes, {(0, 1): [-0.5j, 0.0]})
        du = jacobian(u)
        assert du[0][1].support.size == 2
        assert du[0][0].support.size == du[1][0].support.size == du[1][1].support.size == 0

    def test_translate(self, canonical_modes, random_scalar, rng):
        f = random_scalar(canonical_modes, sub_box=2)
        c = rng.uniform(-2, 2, size=2)
        x = rng.uniform(-2, 2, size=(20, 2))
        np.testing.assert_allclose(evaluate(translate(f, c), x), evaluate(f, x + c), atol=1e-12)
        np.testing.assert_allclose(np.abs(translate(f, c).coeffs), np.abs(f.coeffs), rtol=1e-14)


class TestNorms:
    def test_single_exponential(self, periodic_modes):
        f = QPScalar.exponential(periodic_modes, (1, 2))
        lam_sq = (2 * np.pi) ** 2 * 5
        expected = (1 + lam_sq) ** 0.5 * (1 + 5) ** 0.75
        assert norm(f, NormParams(1, 1.5)) == pytest.approx(expected, rel=1e-14)

    def test_s_must_exceed_half_dimension(self, canonical_modes, random_scalar):
        with pytest.raises(ValueError):
            norm(random_scalar(canonical_modes), NormParams(0, 1.5))

    def test_negative_l_rejected(self):
        with pytest.raises(ValueError):
            NormParams(-1, 2.0)

    def test_triangle_inequality(self, periodic_modes, random_scalar, rng):
        p = NormParams(1, 1.5)
        for _ in range(100):
            f = random_scalar(periodic_modes, sub_box=int(rng.integers(1, 5)), scale=rng.uniform(0.01, 1.0))
            g = random_scalar(periodic_modes, sub_box=int(rng.integers(1, 5)), scale=rng.uniform(0.01, 1.0))
            assert norm(f + g, p) <= (norm(f, p) + norm(g, p)) * (1 + 1e-14)

    def test_derivative_sum_form_l1_is_exact(self, canonical_modes, random_scalar):
        f = random_scalar(canonical_modes, sub_box=2)
        p = NormParams(1, 2.0)
        assert derivative_sum_norm(f, p) == pytest.approx(norm(f, p), rel=1e-12)

    def test_derivative_sum_form_l2_is_equivalent(self, canonical_modes, random_scalar):
        f = random_scalar(canonical_modes, sub_box=2)
        p = NormParams(2, 2.0)
        ratio = derivative_sum_norm(f, p) / norm(f, p)
        assert 1 / np.sqrt(2) - 1e-12 <= ratio <= 1 + 1e-12


class TestPairings:
    def test_energy_of_cosine(self, periodic_modes):
        u = QPVectorField.from_components([_cosine(periodic_modes, (1, 0)), QPScalar.zeros(periodic_modes)])
        assert averaged_energy(u) == pytest.approx(0.25)

    def test_energy_is_positive_definite(self, periodic_modes, random_field, rng):
        assert averaged_energy(QPVectorField.zeros(periodic_modes)) == 0.0
        for _ in range(100):
            u = random_field(periodic_modes, sub_box=int(rng.integers(1, 5)), scale=rng.uniform(1e-6, 1.0))
            assert averaged_energy(u) > 0.0

    def test_inner_product_symmetry(self, canonical_modes, random_scalar):
        f = random_scalar(canonical_modes)
        g = random_scalar(canonical_modes)
        assert besicovitch_inner(f, g) == pytest.approx(besicovitch_inner(g, f), rel=1e-14)

    def test_complex_pairing_of_conjugate_exponentials(self, canonical_modes):
        g = QPScalar.exponential(canonical_modes, (1, 0, -1))
        h = QPScalar.exponential(canonical_modes, (-1, 0, 1))
        assert complex_pairing(g, h) == 1.0
        assert complex_pairing(g, g) == 0.0

    def test_complex_pairing_is_mean_of_product(self, canonical_modes, random_scalar):
        f = random_scalar(canonical_modes)
        g = random_scalar(canonical_modes)
        assert complex_pairing(f, g) == pytest.approx(multiply(f, g).mean, abs=1e-15)


class TestBoxAverage:
    @staticmethod
    def _make_field(ms):
        return QPScalar.from_modes(ms, {(0, 0, 0): 0.3, (1, 0, 0): 0.5, (0, 0, 1): 0.25 - 0.1j, (1, -1, 1): 0.2j})

    @staticmethod
    def _error_bound(f, mode):
        ms = f.modes
        target = ms.lambdas[int(ms.index_of(mode))]
        bound = 0.0
        for i in f.support:
            if ms.modes[i].tolist() != list(mode):
                bound += abs(f.coeffs[i]) / np.abs(ms.lambdas[i] - target).max()
        return bound

    def test_converges_like_one_over_T(self, canonical_modes):
        f = self._make_field(canonical_modes)
        mode = (0, 0, 1)
        exact = f.coefficient(mode)
        bound = self._error_bound(f, mode)
        max_freq = max(np.abs(canonical_modes.lambdas[i] - canonical_modes.lambdas[int(canonical_modes.index_of(mode))]).max()
                       for i in f.support)
        for T in (50.0, 100.0, 200.0, 400.0):
            quad_points = int(np.ceil(16 * 2 * T * max_freq / (2 * np.pi)))
            result = box_average(f, mode, T, quad_points)
            assert result.resolved
            assert abs(result.value - exact) * T <= bound + 1e-8

    def test_under_resolved_warns(self, canonical_modes, caplog):
        f = self._make_field(canonical_modes)
        with caplog.at_level(logging.WARNING, logger="qpeuler.qp_field"):
            result = box_average(f, (0, 0, 1), 100.0, 16)
        assert not result.resolved
        assert "under-resolved" in caplog.text

    def test_periodic_average_is_exact_over_whole_periods(self, periodic_modes):
        f = QPScalar.from_modes(periodic_modes, {(0, 0): 0.7, (1, 2): 0.3 + 0.4j})
        value = box_average_coefficient(f, (1, 2), 3.0, 256)
        assert value == pytest.approx(0.3 + 0.4j, abs=1e-12)
