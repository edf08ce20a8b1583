import numpy as np
import pytest

from polykin.model import Grid, GridSpec, mixture


@pytest.fixture(scope="session")
def desk_mixture():
    """2-species desk instance: one monatomic (m=1), one polyatomic (m=2, dof=3)."""
    return mixture([1.0, 2.0], dofs=[2.0, 3.0], eta=0.5)


@pytest.fixture(scope="session")
def tiny_grid(desk_mixture):
    """Coarse grid sized so dense kernel assembly stays cheap but accurate."""
    return Grid(desk_mixture, GridSpec(v_halfwidth=4.5, v_points=9, I_max=6.0, I_points=6))


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240817)
