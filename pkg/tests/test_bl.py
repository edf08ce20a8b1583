import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from polykin.bl import (
    BLParams,
    channel,
    collision_measure,
    kernel_B,
    measure_rr_constant,
    post_collision,
    quadrature_nodes,
    sample_params,
)
from polykin.model import mixture

MIX = mixture([1.0, 2.0], dofs=[2.0, 3.0], eta=0.5)


def test_blparams_validation():
    with pytest.raises(ValueError):
        BLParams(np.array([1.0, 1.0, 0.0]))
    with pytest.raises(ValueError):
        BLParams(np.array([1.0, 0.0, 0.0]), R=1.5)


def test_head_on_mm():
    ch = channel(MIX, 0, 0)
    vp, vps, Ip, Ips = post_collision(
        MIX, ch, np.array([1.0, 0, 0]), np.array([-1.0, 0, 0]), omega=np.array([0.0, 1.0, 0.0])
    )
    assert np.allclose(vp, [0.0, 1.0, 0.0]) and np.allclose(vps, [0.0, -1.0, 0.0])
    assert Ip is None and Ips is None


def test_pp_endpoint_r1():
    ch = channel(MIX, 1, 1)
    v, vs = np.array([0.5, 0.2, 0.0]), np.array([-0.3, 0.1, 0.4])
    E = 0.5 * MIX.mu(1, 1) * np.sum((v - vs) ** 2) + 0.7 + 0.9
    vp, vps, Ip, Ips = post_collision(
        MIX, ch, v, vs, 0.7, 0.9, omega=np.array([0.0, 0.0, 1.0]), R=1.0, r=0.3
    )
    assert Ip == pytest.approx(0.0) and Ips == pytest.approx(0.0)
    assert 0.5 * MIX.mu(1, 1) * np.sum((vp - vps) ** 2) == pytest.approx(E, rel=1e-13)


@settings(max_examples=200, deadline=None)
@given(
    cls_ij=st.sampled_from([(0, 0), (0, 1), (1, 0), (1, 1)]),
    seed=st.integers(0, 2**31 - 1),
)
def test_conservation_property(cls_ij, seed):
    i, j = cls_ij
    rng = np.random.default_rng(seed)
    ch = channel(MIX, i, j)
    v = rng.normal(size=3)
    vs = rng.normal(size=3)
    I = rng.exponential() if MIX.is_poly(i) else None
    Is = rng.exponential() if MIX.is_poly(j) else None
    om = rng.normal(size=3)
    om /= np.linalg.norm(om)
    R, r = rng.uniform(), rng.uniform()
    vp, vps, Ip, Ips = post_collision(MIX, ch, v, vs, I, Is, omega=om, R=R, r=r)
    mi, mj = MIX.species[i].mass, MIX.species[j].mass
    assert np.allclose(mi * vp + mj * vps, mi * v + mj * vs, rtol=0, atol=1e-12)
    e_pre = 0.5 * mi * v @ v + 0.5 * mj * vs @ vs + (I or 0.0) + (Is or 0.0)
    e_post = 0.5 * mi * vp @ vp + 0.5 * mj * vps @ vps + (Ip or 0.0) + (Ips or 0.0)
    assert abs(e_post - e_pre) <= 8 * np.finfo(float).eps * max(e_pre, 1.0)


def test_involution_pp(rng):
    ch = channel(MIX, 1, 1)
    for _ in range(50):
        v, vs = rng.normal(size=3), rng.normal(size=3)
        I, Is = rng.exponential(), rng.exponential()
        om = rng.normal(size=3)
        om /= np.linalg.norm(om)
        R, r = rng.uniform(), rng.uniform()
        vp, vps, Ip, Ips = post_collision(MIX, ch, v, vs, I, Is, omega=om, R=R, r=r)
        # recover the parameters taking the primed state back
        u = v - vs
        E = 0.5 * MIX.mu(1, 1) * u @ u + I + Is
        Rb = 0.5 * MIX.mu(1, 1) * u @ u / E
        rb = I / (I + Is) if I + Is > 0 else 0.5
        omb = u / np.linalg.norm(u)
        v2, vs2, I2, Is2 = post_collision(MIX, ch, vp, vps, Ip, Ips, omega=omb, R=Rb, r=rb)
        assert np.allclose(v2, v, atol=1e-10) and np.allclose(vs2, vs, atol=1e-10)
        assert abs(I2 - I) < 1e-10 and abs(Is2 - Is) < 1e-10


def test_kernel_B_values():
    mix0 = mixture([1.0, 1.0], dofs=[2.0, 3.0], eta=0.0)
    ch = channel(mix0, 0, 0)
    assert kernel_B(mix0, ch, np.array([2.0, 0, 0])) == pytest.approx(1.0)
    chpp = channel(mix0, 1, 1)
    upp = np.array([2.0, 0, 0])
    # PP at zero internal energies equals MM at the same relative speed and mass
    assert kernel_B(mix0, chpp, upp, 0.0, 0.0) == pytest.approx(
        (0.5 * mix0.mu(1, 1) * 4.0) ** 0.5
    )
    mix_eta = mixture([1.0], eta=1.0 - 1e-12)
    assert kernel_B(mix_eta, channel(mix_eta, 0, 0), np.array([3.0, 1.0, 0])) == pytest.approx(
        1.0, abs=1e-10
    )


def test_kernel_B_exchange_symmetry(rng):
    ch = channel(MIX, 0, 1)
    chT = channel(MIX, 1, 0)
    for _ in range(20):
        u = rng.normal(size=3)
        Is = rng.exponential()
        assert kernel_B(MIX, ch, u, None, Is) == pytest.approx(
            kernel_B(MIX, chT, -u, Is, None), rel=1e-14
        )


def test_collision_measure_values():
    assert collision_measure(MIX, channel(MIX, 0, 0), 0.3, 0.9) == 1.0
    # PP with dof_i = dof_j = 2: exponents vanish
    mix2 = mixture([1.0, 1.0, 1.0], dofs=[2.0, 2.0, 2.0], polyatomic=[False, True, True])
    val = collision_measure(mix2, channel(mix2, 1, 2), 0.25, 0.5, I=2.0, I_star=3.0)
    assert val == pytest.approx(0.75 * np.sqrt(0.25))
    # MP with dof_j = 2, R = 1/4, I_* = 3
    val = collision_measure(mix2, channel(mix2, 0, 1), 0.25, 0.5, I_star=3.0)
    assert val == pytest.approx(0.5)
    with pytest.raises(ValueError):
        collision_measure(MIX, channel(MIX, 1, 1), 1.5, 0.5, 1.0, 1.0)


def test_sampling_moments(rng):
    ch = channel(MIX, 1, 1)
    om, R, r = sample_params(MIX, ch, rng, n=40000)
    # omega isotropy
    assert abs(np.mean(om[:, 2] ** 2) - 1.0 / 3.0) < 3.0 * 0.01
    # R ~ Beta(3/2, 3) for dof sum 6
    a = 0.5 * (3.0 + 3.0)
    mean_R = 1.5 / (1.5 + a)
    sd = np.std(R) / np.sqrt(len(R))
    assert abs(np.mean(R) - mean_R) < 3.0 * sd
    # r ~ Beta(3/2, 3/2), symmetric around 1/2
    sd = np.std(r) / np.sqrt(len(r))
    assert abs(np.mean(r) - 0.5) < 3.0 * sd
    # uniform r for dof = 2 pair
    mix2 = mixture([1.0, 1.0], dofs=[2.0, 2.0], polyatomic=[False, True])
    _, _, r2 = sample_params(mix2, channel(mix2, 1, 1), rng, n=40000)
    assert abs(np.mean(r2) - 0.5) < 3.0 * np.std(r2) / np.sqrt(len(r2))


def test_quadrature_nodes_exactness():
    ch = channel(MIX, 1, 1)
    R, wR, r, wr, om, wom = quadrature_nodes(MIX, ch, n_R=8, n_r=8)
    # total measure constant
    total = wR.sum() * wr.sum() * wom.sum()
    assert total == pytest.approx(measure_rr_constant(MIX, ch), rel=1e-12)
    # R-monomials up to high order integrate exactly against the Beta weight
    from scipy.special import beta as B

    a = 3.0  # (dof_i + dof_j)/2
    for k in range(6):
        exact = B(1.5 + k, a)
        assert np.sum(wR * R**k) == pytest.approx(exact, rel=1e-12)
    for k in range(6):
        exact = B(1.5 + k, 1.5)
        assert np.sum(wr * r**k) == pytest.approx(exact, rel=1e-12)
    with pytest.raises(ValueError):
        quadrature_nodes(MIX, ch, n_R=0)
