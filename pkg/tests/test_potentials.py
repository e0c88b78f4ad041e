from __future__ import annotations

import numpy as np
import pytest

from paralangevin.potentials import (
    DoubleWell,
    Free,
    Harmonic,
    LennardJonesCluster,
    MinimizationError,
    Perturbed,
    PotentialError,
    PropagatorPair,
    gradient_check,
    local_minima,
)


def _hexagon(r: float) -> np.ndarray:
    """LJ7 2D start: one atom at the origin, six on a ring of radius r."""
    coords = [(0.0, 0.0)]
    for k in range(6):
        angle = k * np.pi / 3.0
        coords.append((r * np.cos(angle), r * np.sin(angle)))
    return np.array(coords).reshape(-1)


class TestFree:
    def test_energy_zero(self):
        pot = Free()
        assert pot.energy([1.0, -5.0, 3.0]) == 0.0

    def test_gradient_zero(self):
        pot = Free()
        assert np.array_equal(pot.gradient([1.0, 2.0]), [0.0, 0.0])


class TestHarmonic:
    def test_hand_values(self):
        pot = Harmonic(k=1.0)
        assert pot.energy([2.0]) == 2.0
        assert np.array_equal(pot.gradient([2.0]), [2.0])

    def test_vector_stiffness_pins_dimension(self):
        pot = Harmonic(k=[1.0, 4.0])
        assert pot.dimension == 2
        assert pot.energy([1.0, 1.0]) == 2.5
        with pytest.raises(PotentialError):
            pot.energy([1.0, 1.0, 1.0])

    def test_rejects_nonpositive_stiffness(self):
        with pytest.raises(ValueError):
            Harmonic(k=0.0)
        with pytest.raises(ValueError):
            Harmonic(k=[1.0, -1.0])


class TestDoubleWell:
    def test_hand_values(self):
        pot = DoubleWell(a=1.0, b=1.0)
        assert pot.energy([0.0]) == 1.0  # barrier top
        assert pot.energy([1.0]) == 0.0
        assert pot.energy([-1.0]) == 0.0
        assert np.array_equal(pot.gradient([0.0]), [0.0])

    def test_gradient_formula(self):
        pot = DoubleWell(a=2.0, b=1.0)
        q = np.array([0.5])
        # dV/dq = 4 a q (q^2 - b)
        assert pot.gradient(q)[0] == pytest.approx(4.0 * 2.0 * 0.5 * (0.25 - 1.0), rel=1e-15)

    def test_axis_separable(self):
        pot = DoubleWell(a=[1.0, 2.0], b=[1.0, 4.0])
        assert pot.energy([1.0, 2.0]) == 0.0
        assert pot.energy([0.0, 0.0]) == 1.0 + 2.0 * 16.0


class TestLennardJones:
    def test_two_atoms_at_minimum_distance(self):
        pot = LennardJonesCluster(epsilon=1.0, sigma=1.0, n_atoms=2, space_dim=1)
        r0 = 2.0 ** (1.0 / 6.0)
        grad = pot.gradient([0.0, r0])
        assert np.abs(grad).max() <= 1e-12
        assert pot.energy([0.0, r0]) == pytest.approx(-1.0, rel=1e-12)

    def test_coincident_atoms_domain_error(self):
        pot = LennardJonesCluster(n_atoms=2, space_dim=2)
        with pytest.raises(PotentialError):
            pot.energy([0.0, 0.0, 0.0, 0.0])
        with pytest.raises(PotentialError):
            pot.gradient([0.0, 0.0, 0.0, 0.0])

    def test_translation_invariance(self):
        pot = LennardJonesCluster(n_atoms=7, space_dim=2)
        q = _hexagon(1.2)
        shift = np.tile([0.7, -0.3], 7)
        e0 = pot.energy(q)
        e1 = pot.energy(q + shift)
        assert e1 == pytest.approx(e0, rel=1e-12)
        g0 = pot.gradient(q)
        g1 = pot.gradient(q + shift)
        assert np.allclose(g0, g1, rtol=1e-10, atol=1e-12)

    def test_forces_sum_to_zero(self):
        pot = LennardJonesCluster(n_atoms=7, space_dim=2)
        grad = pot.gradient(_hexagon(1.2)).reshape(7, 2)
        scale = np.abs(grad).sum()
        assert np.abs(grad.sum(axis=0)).max() <= 1e-12 * max(scale, 1.0)


class TestPerturbed:
    def test_lambda_zero_bitwise(self):
        base = DoubleWell(a=1.0, b=1.0)
        delta = Harmonic(k=0.3)
        pot = Perturbed(base=base, delta=delta, lam=0.0)
        q = np.array([0.7123456])
        assert pot.energy(q) == base.energy(q)
        assert np.array_equal(pot.gradient(q), base.gradient(q))

    def test_exactly_linear_in_lambda(self):
        base = DoubleWell(a=1.0, b=1.0)
        delta = Harmonic(k=0.5)
        q = np.array([0.9])
        for lam in (0.25, 1.0, -2.0):
            pot = Perturbed(base=base, delta=delta, lam=lam)
            assert pot.energy(q) == base.energy(q) + lam * delta.energy(q)
            assert np.array_equal(
                pot.gradient(q), base.gradient(q) + lam * delta.gradient(q)
            )

    def test_incompatible_dimensions_rejected(self):
        with pytest.raises(ValueError):
            Perturbed(
                base=LennardJonesCluster(n_atoms=2, space_dim=2),
                delta=Harmonic(k=[1.0, 1.0, 1.0]),
                lam=0.5,
            )


class TestGradientCheck:
    def test_harmonic(self):
        assert gradient_check(Harmonic(k=1.0), [1.7, -0.4], h=1e-5) < 1e-8

    def test_double_well(self):
        assert gradient_check(DoubleWell(a=1.0, b=1.0), [0.5], h=1e-5) < 1e-8

    def test_lj7_near_minimum(self):
        pot = LennardJonesCluster(n_atoms=7, space_dim=2)
        q = _hexagon(2.0 ** (1.0 / 6.0))
        assert gradient_check(pot, q, h=1e-6) < 1e-5

    def test_perturbed(self):
        pot = Perturbed(base=DoubleWell(a=1.0, b=1.0), delta=Harmonic(k=0.3), lam=0.8)
        assert gradient_check(pot, [0.6], h=1e-5) < 1e-8


class TestLocalMinima:
    def test_double_well_two_basins(self):
        minima = local_minima(DoubleWell(a=1.0, b=1.0), [[-2.0], [2.0]], tol=1e-8)
        assert len(minima) == 2
        assert minima[0][0] == pytest.approx(-1.0, abs=1e-7)
        assert minima[1][0] == pytest.approx(1.0, abs=1e-7)

    def test_harmonic_single_minimum(self):
        minima = local_minima(Harmonic(k=1.0), [[5.0]], tol=1e-10)
        assert len(minima) == 1
        assert abs(minima[0][0]) <= 1e-10

    def test_deduplicates_within_tol(self):
        minima = local_minima(DoubleWell(a=1.0, b=1.0), [[2.0], [1.5], [-2.0]], tol=1e-6)
        assert len(minima) == 2

    def test_lj7_hexagon(self):
        pot = LennardJonesCluster(n_atoms=7, space_dim=2)
        rng = np.random.default_rng(3)
        start = _hexagon(1.15) + 0.03 * rng.standard_normal(14)
        start -= np.tile(start.reshape(7, 2).mean(axis=0), 7)
        (minimum,) = local_minima(pot, [start], tol=1e-6)
        assert np.linalg.norm(pot.gradient(minimum)) <= 1e-6
        assert pot.energy(minimum) < pot.energy(start)

    def test_nonconvergence_names_start(self):
        with pytest.raises(MinimizationError) as err:
            local_minima(DoubleWell(a=1.0, b=1.0), [[2.0]], tol=1e-12, max_iter=1)
        assert "2.0" in str(err.value)


class TestPropagatorPair:
    def test_valid(self):
        pair = PropagatorPair(
            fine=DoubleWell(a=1.0, b=1.0),
            coarse=DoubleWell(a=0.9, b=1.0),
            cost_fine=175.0,
            cost_coarse=1.0,
        )
        assert pair.cost_fine == 175.0

    def test_cost_ordering_enforced(self):
        with pytest.raises(ValueError):
            PropagatorPair(
                fine=Free(), coarse=Free(), cost_fine=1.0, cost_coarse=2.0
            )
        with pytest.raises(ValueError):
            PropagatorPair(fine=Free(), coarse=Free(), cost_fine=1.0, cost_coarse=0.0)

    def test_dimension_compatibility(self):
        with pytest.raises(ValueError):
            PropagatorPair(
                fine=LennardJonesCluster(n_atoms=2, space_dim=2),
                coarse=Harmonic(k=[1.0, 1.0, 1.0]),
                cost_fine=2.0,
                cost_coarse=1.0,
            )
