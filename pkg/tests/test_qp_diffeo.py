import numpy as np
import pytest

from qpeuler.errors import DiffeoMarginError, NewtonConvergenceError
from qpeuler.freq_lattice import build_mode_set, canonical_omega, identity_omega, is_lattice_translation
from qpeuler.qp_diffeo import (
    TorusGrid,
    compose_diffeo,
    compose_field,
    compose_field_report,
    diffeo_jacobian,
    evaluate_diffeo,
    homomorphism_check,
    identity_diffeo,
    invert,
    jacobian_determinant_field,
    jacobian_margin,
    lift,
    make_diffeo,
    sylvester_gap,
    torus_distance,
    torus_samples,
    translation_diffeo,
)
from qpeuler.qp_field import QPScalar, QPVectorField, evaluate, translate

from conftest import IRRATIONAL_OMEGA


def _make_sine_displacement(ms, a):
    """f = (a/2π) (sin 2πx1, 0): det(I + df) = 1 + a cos 2πx1"""
    f1 = QPScalar.from_modes(ms, {(1, 0): -0.5j * a / (2 * np.pi)})
    return QPVectorField.from_components([f1, QPScalar.zeros(ms)])


class TestTorusGrid:
    def test_default_size_is_power_of_two(self):
        assert TorusGrid.for_modes(build_mode_set(identity_omega(2), 3)).points_per_dim == 16
        assert TorusGrid.for_modes(build_mode_set(identity_omega(2), 4)).points_per_dim == 32

    def test_under_resolving_grid_rejected(self):
        with pytest.raises(ValueError):
            TorusGrid.for_modes(build_mode_set(identity_omega(2), 3), 10)

    def test_periodic_samples_are_point_values(self, periodic_modes, random_field):
        f = random_field(periodic_modes, sub_box=3)
        grid = TorusGrid.for_modes(periodic_modes)
        np.testing.assert_allclose(torus_samples(f, grid), evaluate(f, grid.nodes), atol=1e-13)


class TestMargin:
    def test_sylvester_identity(self, rng):
        omega = canonical_omega(2, IRRATIONAL_OMEGA)
        for _ in range(100):
            A = 0.3 * rng.standard_normal((2, 3))
            assert sylvester_gap(omega, A) <= 1e-11

    def test_closed_form_margin(self, periodic_modes):
        grid = TorusGrid.for_modes(periodic_modes)
        assert jacobian_margin(_make_sine_displacement(periodic_modes, 0.5), grid) == pytest.approx(0.5, abs=1e-12)

    def test_margin_is_min_pointwise_determinant(self, periodic_modes, random_field):
        grid = TorusGrid.for_modes(periodic_modes)
        phi = make_diffeo(random_field(periodic_modes, scale=0.005), grid)
        dets = np.linalg.det(diffeo_jacobian(phi, grid.nodes))
        assert phi.margin == pytest.approx(dets.min(), abs=1e-12)

    def test_folding_map_rejected(self, periodic_modes):
        grid = TorusGrid.for_modes(periodic_modes)
        with pytest.raises(DiffeoMarginError) as info:
            make_diffeo(_make_sine_displacement(periodic_modes, 2.0), grid)
        assert info.value.margin == pytest.approx(-1.0, abs=1e-12)

    def test_identity(self, canonical_modes):
        phi = identity_diffeo(canonical_modes)
        grid = TorusGrid.for_modes(canonical_modes)
        assert jacobian_margin(phi.displacement, grid) == pytest.approx(1.0)

    def test_determinant_field(self, periodic_modes, random_field, rng):
        f = random_field(periodic_modes, scale=0.005)
        x = rng.uniform(-3, 3, size=(30, 2))
        phi = make_diffeo(f, TorusGrid.for_modes(periodic_modes))
        expected = np.linalg.det(diffeo_jacobian(phi, x))
        np.testing.assert_allclose(evaluate(jacobian_determinant_field(f), x), expected, atol=1e-12)


class TestComposition:
    def test_identity_is_neutral(self, canonical_modes, random_field):
        g = random_field(canonical_modes, sub_box=2)
        grid = TorusGrid.for_modes(canonical_modes)
        out = compose_field(g, identity_diffeo(canonical_modes), grid)
        np.testing.assert_allclose(out.coeffs, g.coeffs, atol=1e-13)

    def test_translation_matches_shift(self, canonical_modes, random_scalar):
        g = random_scalar(canonical_modes, sub_box=2)
        grid = TorusGrid.for_modes(canonical_modes)
        c = (0.37, -1.21)
        out = compose_field(g, translation_diffeo(canonical_modes, c), grid)
        np.testing.assert_allclose(out.coeffs, translate(g, c).coeffs, atol=1e-13)

    def test_identity_is_neutral_for_diffeos(self, canonical_modes, random_field):
        grid = TorusGrid.for_modes(canonical_modes)
        phi = make_diffeo(random_field(canonical_modes, scale=0.001), grid)
        ident = identity_diffeo(canonical_modes)
        np.testing.assert_allclose(compose_diffeo(ident, phi, grid).displacement.coeffs, phi.displacement.coeffs, atol=1e-14)
        np.testing.assert_allclose(compose_diffeo(phi, ident, grid).displacement.coeffs, phi.displacement.coeffs, atol=1e-14)

    def test_translations_add(self, canonical_modes):
        grid = TorusGrid.for_modes(canonical_modes)
        both = compose_diffeo(translation_diffeo(canonical_modes, (-1.3, 0.25)), translation_diffeo(canonical_modes, (0.4, 0.7)), grid)
        np.testing.assert_allclose(both.displacement.mean, [-0.9, 0.95], atol=1e-14)
        assert both.displacement.support.tolist() == [canonical_modes.zero_index]

    def test_pointwise_composition(self, random_field, rng):
        ms = build_mode_set(identity_omega(2), 6)
        grid = TorusGrid.for_modes(ms)
        phi = make_diffeo(random_field(ms, scale=0.002), grid)
        g = QPScalar.from_modes(ms, {(1, 0): 0.5, (0, 1): 0.25j})
        report = compose_field_report(g, phi, grid)
        assert report.residual <= 1e-9
        x = rng.uniform(-4, 4, size=(40, 2))
        np.testing.assert_allclose(evaluate(report.field, x), evaluate(g, evaluate_diffeo(phi, x)), atol=1e-9)

    def test_composed_diffeo_is_pointwise_composition(self, random_field, rng):
        ms = build_mode_set(identity_omega(2), 6)
        grid = TorusGrid.for_modes(ms)
        phi = make_diffeo(random_field(ms, scale=0.002), grid)
        psi = make_diffeo(random_field(ms, scale=0.002), grid)
        both = compose_diffeo(psi, phi, grid)
        x = rng.uniform(-4, 4, size=(40, 2))
        np.testing.assert_allclose(evaluate_diffeo(both, x), evaluate_diffeo(psi, evaluate_diffeo(phi, x)), atol=1e-9)


class TestInversion:
    @pytest.fixture
    def setup(self, random_field):
        ms = build_mode_set(identity_omega(2), 10)
        grid = TorusGrid.for_modes(ms, 64)
        phi = make_diffeo(random_field(ms, scale=0.001), grid)
        return ms, grid, phi

    def test_round_trip(self, setup):
        _, grid, phi = setup
        inverse = invert(phi, grid)
        assert inverse.residual <= 1e-8

    def test_inverse_jacobian(self, setup, rng):
        _, grid, phi = setup
        inverse = invert(phi, grid)
        x = rng.uniform(-5, 5, size=(20, 2))
        product = diffeo_jacobian(inverse, evaluate_diffeo(phi, x)) @ diffeo_jacobian(phi, x)
        np.testing.assert_allclose(product, np.broadcast_to(np.eye(2), product.shape), atol=1e-7)

    def test_translation_inverse(self, canonical_modes):
        grid = TorusGrid.for_modes(canonical_modes)
        inverse = invert(translation_diffeo(canonical_modes, (0.4, -0.2)), grid)
        np.testing.assert_allclose(inverse.displacement.mean, [-0.4, 0.2], atol=1e-14)
        assert inverse.displacement.support.tolist() == [canonical_modes.zero_index]

    def test_identity_inverts_to_identity(self, canonical_modes):
        grid = TorusGrid.for_modes(canonical_modes)
        inverse = invert(identity_diffeo(canonical_modes), grid)
        assert inverse.displacement.support.size == 0
        assert inverse.margin == pytest.approx(1.0)
        assert inverse.residual == 0.0

    def test_zero_displacement_inverts(self, periodic_modes):
        grid = TorusGrid.for_modes(periodic_modes)
        inverse = invert(make_diffeo(QPVectorField.zeros(periodic_modes), grid), grid)
        assert inverse.displacement.support.size == 0
        assert inverse.residual == 0.0

    def test_double_inverse_recovers_the_map(self, setup, rng):
        _, grid, phi = setup
        inverse = invert(phi, grid)
        back = invert(inverse, grid)
        x = rng.uniform(-5, 5, size=(50, 2))
        gap = np.abs(evaluate(back.displacement, x) - evaluate(phi.displacement, x)).max()
        assert gap <= 10 * max(inverse.residual, back.residual, 1e-15)

    def test_newton_failure_reported(self, setup):
        _, grid, phi = setup
        with pytest.raises(NewtonConvergenceError) as info:
            invert(phi, grid, newton_tol=1e-30, max_iter=1)
        assert info.value.failed_nodes > 0


class TestLift:
    def test_identity_lift(self, canonical_modes):
        grid = TorusGrid.for_modes(canonical_modes)
        lifted = lift(identity_diffeo(canonical_modes), grid)
        np.testing.assert_array_equal(lifted.points, grid.nodes)

    def test_lattice_translation_lifts_to_identity(self, periodic_modes):
        grid = TorusGrid.for_modes(periodic_modes)
        lifted = lift(translation_diffeo(periodic_modes, (1.0, -2.0)), grid)
        assert torus_distance(lifted.points, grid.nodes).max() <= 1e-12

    @pytest.mark.parametrize("gamma", [(1.0, 0.0), (0.0, -1.0), (2.0, -3.0)])
    def test_lattice_translation_equivariance(self, periodic_modes, random_field, rng, gamma):
        assert is_lattice_translation(periodic_modes.omega, gamma)
        phi = make_diffeo(random_field(periodic_modes, sub_box=2, scale=0.001), TorusGrid.for_modes(periodic_modes))
        x = rng.uniform(-3, 3, size=(30, 2))
        np.testing.assert_allclose(evaluate_diffeo(phi, x + np.array(gamma)), evaluate_diffeo(phi, x) + np.array(gamma), atol=1e-12)

    def test_non_lattice_translation_moves_the_torus(self, canonical_modes):
        grid = TorusGrid.for_modes(canonical_modes)
        lifted = lift(translation_diffeo(canonical_modes, (1.0, 0.0)), grid)
        assert torus_distance(lifted.points, grid.nodes).min() > 0.1

    def test_displacements_in_unit_interval(self, canonical_modes, random_field):
        grid = TorusGrid.for_modes(canonical_modes)
        lifted = lift(make_diffeo(random_field(canonical_modes, scale=0.01), grid), grid)
        assert lifted.displacement.min() >= 0.0
        assert lifted.displacement.max() < 1.0

    def test_homomorphism(self, random_field):
        ms = build_mode_set(canonical_omega(2, IRRATIONAL_OMEGA), 3)
        grid = TorusGrid.for_modes(ms)
        phi = make_diffeo(random_field(ms, scale=1e-4), grid)
        psi = make_diffeo(random_field(ms, scale=1e-4), grid)
        assert homomorphism_check(psi, phi, grid) <= 1e-6
