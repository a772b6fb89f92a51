import numpy as np
import pytest

from qpeuler.errors import BulletSupportError, ResonanceError
from qpeuler.freq_lattice import FrequencyMatrix, build_mode_set
from qpeuler.qp_field import (
    NormParams,
    QPScalar,
    QPVectorField,
    divergence,
    gradient,
    jacobian,
    laplacian,
    mean_square,
    multiply,
    norm,
)
from qpeuler.qp_operators import (
    advect,
    inv_laplace_grad_div,
    inv_laplace_infty,
    inv_laplace_partial,
    leray_project,
    pressure_gradient,
    pressure_recover,
    project_bullet,
    project_infty,
    quadratic,
)


def _shear(ms):
    g = QPScalar.from_modes(ms, {(0, 1): 0.05, (0, 2): -0.02j})
    return QPVectorField.from_components([g, QPScalar.zeros(ms)])


class TestProjections:
    def test_partition(self, canonical_modes, random_scalar):
        f = random_scalar(canonical_modes, sub_box=2)
        bullet, infty = project_bullet(f), project_infty(f)
        np.testing.assert_array_equal((bullet + infty).coeffs, f.coeffs)
        assert not np.any((bullet.coeffs != 0) & (infty.coeffs != 0))

    @pytest.mark.parametrize("tau", [1, 2, 3])
    def test_bullet_projection_gains_derivatives(self, random_scalar, tau):
        # |Λ_m| = 2π·0.112·|m|: only m = 0, ±1 sit in the bullet block
        ms = build_mode_set(FrequencyMatrix([[0.1], [0.05]]), 4)
        f = random_scalar(ms, sub_box=4)
        bullet = project_bullet(f)
        assert bullet.support.size == 2
        for l in (0, 1):
            assert norm(bullet, NormParams(l + tau, 1.0)) <= 2 ** (tau / 2) * norm(f, NormParams(l, 1.0))

    def test_inverse_laplacian_on_infinity_block(self, canonical_modes, random_scalar):
        f = project_infty(random_scalar(canonical_modes, sub_box=2))
        back = laplacian(inv_laplace_infty(f))
        np.testing.assert_allclose(back.coeffs, f.coeffs, rtol=1e-13, atol=1e-16)

    def test_inverse_laplacian_refuses_bullet_input(self, canonical_modes):
        with pytest.raises(BulletSupportError):
            inv_laplace_infty(QPScalar.constant(canonical_modes, 1.0))


class TestLeray:
    def test_projection_is_divergence_free(self, canonical_modes, random_field):
        w = random_field(canonical_modes, sub_box=2)
        assert mean_square(divergence(leray_project(w))) <= 1e-12

    def test_idempotent(self, canonical_modes, random_field):
        w = leray_project(random_field(canonical_modes, sub_box=2))
        np.testing.assert_allclose(leray_project(w).coeffs, w.coeffs, atol=1e-14)

    def test_gradient_part_is_idempotent(self, canonical_modes, random_field):
        g = inv_laplace_grad_div(random_field(canonical_modes, sub_box=2))
        np.testing.assert_allclose(inv_laplace_grad_div(g).coeffs, g.coeffs, atol=1e-14)

    def test_mean_untouched(self, periodic_modes):
        w = QPVectorField.constant(periodic_modes, [0.3, -0.1])
        np.testing.assert_array_equal(leray_project(w).coeffs, w.coeffs)

    def test_gradients_are_removed(self, periodic_modes, random_scalar):
        grad = gradient(random_scalar(periodic_modes, sub_box=2))
        assert leray_project(grad).max_abs() <= 1e-14


class TestNonlinearities:
    def test_quadratic_matches_full_trace(self, canonical_modes, random_field):
        w = random_field(canonical_modes, sub_box=2)
        dw = jacobian(w)
        expected = QPScalar.zeros(canonical_modes)
        for j in range(2):
            for k in range(2):
                expected = expected + multiply(dw[j][k], dw[k][j])
        np.testing.assert_allclose(quadratic(w).coeffs, expected.coeffs, rtol=0, atol=1e-14 * expected.max_abs())

    def test_divergence_of_advection_is_quadratic(self, canonical_modes, random_divfree):
        for _ in range(200):
            u = random_divfree(canonical_modes, sub_box=2)
            q = quadratic(u)
            diff = divergence(advect(u)) - q
            assert diff.max_abs() <= 1e-12 * max(1.0, q.max_abs())

    def test_shear_is_a_fixed_point(self, periodic_modes):
        u = _shear(periodic_modes)
        assert advect(u).max_abs() == 0.0
        assert quadratic(u).max_abs() == 0.0
        assert pressure_gradient(u).max_abs() == 0.0
        assert pressure_recover(u).max_abs() == 0.0


class TestPressure:
    def test_pressure_gradient_is_mean_free(self, canonical_modes, random_divfree):
        u = random_divfree(canonical_modes, sub_box=2)
        assert np.all(pressure_gradient(u).mean == 0)

    @pytest.mark.parametrize("fixture", ["periodic_modes", "canonical_modes"])
    def test_recovered_pressure_matches_operator(self, fixture, request, random_divfree):
        ms = request.getfixturevalue(fixture)
        u = random_divfree(ms, sub_box=2)
        grad_p = gradient(pressure_recover(u))
        pg = pressure_gradient(u)
        np.testing.assert_allclose((pg + grad_p).coeffs, 0.0, atol=1e-12 * max(1.0, pg.max_abs()))

    def test_pressure_has_zero_mean(self, canonical_modes, random_divfree):
        assert pressure_recover(random_divfree(canonical_modes)).mean == 0


class TestResonance:
    @pytest.fixture
    def resonant_modes(self):
        # Λ_(1,-1) = 0
        return build_mode_set(FrequencyMatrix([[1.0], [1.0]]), 1)

    def test_excited_resonant_mode_raises(self, resonant_modes):
        f = QPScalar.from_modes(resonant_modes, {(1, -1): 0.5})
        with pytest.raises(ResonanceError) as info:
            inv_laplace_partial(f, 0, 0)
        assert info.value.mode in ((1, -1), (-1, 1))

    def test_unexcited_resonant_mode_is_fine(self, resonant_modes):
        f = QPScalar.from_modes(resonant_modes, {(1, 0): 0.5})
        out = inv_laplace_partial(f, 0, 0)
        assert out.coefficient((1, 0)) == pytest.approx(0.5)

    def test_vector_operator_raises_too(self, resonant_modes):
        w = QPVectorField.from_modes(resonant_modes, {(1, -1): [0.5]})
        with pytest.raises(ResonanceError):
            inv_laplace_grad_div(w)
