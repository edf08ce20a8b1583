import math

import numpy as np
import pytest

from polykin.model import (
    DistributionField,
    Grid,
    GridSpec,
    PhasePoint,
    invariant_moments,
    maxwellian_eval,
    mixture,
    weight_eval,
)
from polykin.quadrature import gauss_laguerre_gen


def test_species_validation():
    with pytest.raises(ValueError):
        mixture([1.0], dofs=[3.0], polyatomic=[False])
    with pytest.raises(ValueError):
        mixture([-1.0])
    with pytest.raises(ValueError):
        mixture([1.0, 2.0], dofs=[3.0, 2.0])  # polyatomic listed first


def test_maxwellian_pointwise():
    mix = mixture([1.0, 1.0], dofs=[2.0, 2.0], polyatomic=[False, True])
    val = maxwellian_eval(mix, 0, PhasePoint(np.zeros(3)))
    assert val == pytest.approx((2.0 * math.pi) ** -1.5, rel=1e-12)
    # dof = 2 polyatomic: I^0 / Gamma(1) = 1, finite at I = 0
    val = maxwellian_eval(mix, 1, PhasePoint(np.zeros(3), 0.0))
    assert val == pytest.approx((2.0 * math.pi) ** -1.5, rel=1e-12)
    mix3 = mixture([1.0, 1.0], dofs=[2.0, 3.0])
    assert maxwellian_eval(mix3, 1, PhasePoint(np.zeros(3), 0.0)) == 0.0
    with pytest.raises(ValueError):
        maxwellian_eval(mix3, 1, PhasePoint(np.zeros(3)))  # missing I


def test_maxwellian_mass_oracle():
    # refined quadrature oracle: Gauss-Laguerre in I, fine trapezoid panels in v.
    # The closed form gives total mass c * m^{-3/2}; the grid integral of the
    # package Maxwellian must converge to the oracle value.
    amp = 1.7
    mix = mixture([1.0, 2.0], dofs=[2.0, 3.0], amplitudes=[1.0, amp])
    v1 = np.linspace(-8.0 / math.sqrt(2.0), 8.0 / math.sqrt(2.0), 81)
    hv = v1[1] - v1[0]
    vv = np.stack(np.meshgrid(v1, v1, v1, indexing="ij"), axis=-1).reshape(-1, 3)
    xI, wI = gauss_laguerre_gen(24, 0.5, 1.0)  # weight I^{1/2} e^{-I}
    g = np.exp(-0.5 * 2.0 * np.einsum("ij,ij->i", vv, vv))
    oracle = amp / (2.0 * math.pi) ** 1.5 / math.gamma(1.5) * hv**3 * g.sum() * wI.sum()
    assert oracle == pytest.approx(amp * 2.0 ** -1.5, rel=1e-7)
    grid = Grid(
        mix,
        GridSpec(8.0 / math.sqrt(2.0), 61, I_max=40.0, I_points=48, I_node_rule="gauss_laguerre"),
    )
    mass = invariant_moments(mix, grid, grid.maxwellian_field())["mass"]
    assert mass[1] == pytest.approx(oracle, rel=1e-6)
    assert mass[0] == pytest.approx(1.0, rel=1e-6)


def test_weight_eval():
    mix = mixture([1.0, 1.0], dofs=[2.0, 3.0])
    assert weight_eval(mix, 0, 0.0, PhasePoint(np.array([3.0, 0, 0]))) == 1.0
    assert weight_eval(mix, 0, 2.0, PhasePoint(np.array([1.0, 0, 0]))) == pytest.approx(4.0)
    assert weight_eval(mix, 1, 6.0, PhasePoint(np.zeros(3), 4.0)) == pytest.approx(729.0)
    with pytest.raises(ValueError):
        weight_eval(mix, 0, -1.0, PhasePoint(np.zeros(3)))


def test_invariant_moments(desk_mixture, tiny_grid):
    F = tiny_grid.maxwellian_field()
    mom = invariant_moments(desk_mixture, tiny_grid, F)
    assert np.allclose(mom["momentum"], 0.0, atol=1e-14)  # odd integrand, symmetric grid
    zero = invariant_moments(desk_mixture, tiny_grid, DistributionField.zeros(tiny_grid))
    assert zero["energy"] == 0.0 and np.all(zero["mass"] == 0.0)
    # linearity
    m2 = invariant_moments(desk_mixture, tiny_grid, F.scaled(2.0))
    assert m2["energy"] == pytest.approx(2.0 * mom["energy"], rel=1e-13)


def test_energy_second_moment_oracle():
    # single monatomic species, m = 1, c = 1: energy = 3 (Gaussian second moment)
    mix = mixture([1.0])
    grid = Grid(mix, GridSpec(v_halfwidth=8.0, v_points=41, I_max=1.0, I_points=1))
    mom = invariant_moments(mix, grid, grid.maxwellian_field())
    assert mom["energy"] == pytest.approx(3.0, rel=1e-6)
    assert mom["mass"][0] == pytest.approx(1.0, rel=1e-6)


def test_weight_monotone(desk_mixture, rng):
    betas = np.sort(rng.uniform(0.0, 8.0, 4))
    rs = np.sort(rng.uniform(0.0, 5.0, 4))
    Is = np.sort(rng.uniform(0.0, 9.0, 4))
    vals = np.array(
        [
            [
                [weight_eval(desk_mixture, 1, b, PhasePoint(np.array([r, 0, 0]), I)) for I in Is]
                for r in rs
            ]
            for b in betas
        ]
    )
    assert np.all(np.diff(vals, axis=0) >= 0.0)
    assert np.all(np.diff(vals, axis=1) >= 0.0)
    assert np.all(np.diff(vals, axis=2) >= 0.0)
