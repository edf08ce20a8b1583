"""Borgnakke-Larsen parametrization of binary collisions.

A channel (i, j) belongs to one of four classes depending on whether each
partner is monatomic (M) or polyatomic (P).  Post-collision states are
parametrized by a scattering direction omega and the energy fractions
R (translational share of the channel energy E) and r (split of the internal
share between the two partners).  All routines are vectorized: scalar or
(N, ...) array arguments are accepted.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import beta as beta_fn

from .quadrature import gauss_beta, lebedev26, octahedron6, sphere_product

CLASSES = ("MM", "MP", "PM", "PP")


@dataclass(frozen=True)
class CollisionChannel:
    i: int
    j: int
    cls: str

    def __post_init__(self):
        if self.cls not in CLASSES:
            raise ValueError(f"unknown channel class {self.cls}")


def channel(mix, i, j):
    cls = ("P" if mix.is_poly(i) else "M") + ("P" if mix.is_poly(j) else "M")
    return CollisionChannel(i, j, cls)


@dataclass(frozen=True)
class BLParams:
    """omega on S^2; R, r in [0,1].  R is ignored for MM, r only used for PP."""

    omega: np.ndarray
    R: float = 1.0
    r: float = 0.5

    def __post_init__(self):
        om = np.asarray(self.omega, dtype=float)
        object.__setattr__(self, "omega", om)
        if abs(float(np.linalg.norm(om)) - 1.0) > 1e-12:
            raise ValueError("omega must be a unit vector")
        if not (0.0 <= self.R <= 1.0 and 0.0 <= self.r <= 1.0):
            raise ValueError("R and r must lie in [0, 1]")


def channel_energy(mix, ch, u, I=None, I_star=None):
    """E = mu |u|^2 / 2 + I (if i poly) + I_* (if j poly)."""
    u = np.asarray(u, dtype=float)
    usq = np.einsum("...k,...k->...", u, u)
    E = 0.5 * mix.mu(ch.i, ch.j) * usq
    if ch.cls[0] == "P":
        E = E + np.asarray(I)
    if ch.cls[1] == "P":
        E = E + np.asarray(I_star)
    return E


def kernel_B(mix, ch, u, I=None, I_star=None):
    """Collision kernel B = E^((1-eta)/2), the canonical hard-potential form."""
    return channel_energy(mix, ch, u, I, I_star) ** (0.5 * (1.0 - mix.eta))


def post_collision(mix, ch, v, v_star, I=None, I_star=None, omega=None, R=1.0, r=0.5):
    """Reconstruct (v', v'_*, I', I'_*) from pre-collision state and parameters.

    MM ignores R (|u'| = |u|); MP assigns the internal residue to I'_*,
    PM to I'; PP splits it r : (1-r).  Returns None for absent energies.
    """
    mi, mj = mix.species[ch.i].mass, mix.species[ch.j].mass
    mu = mix.mu(ch.i, ch.j)
    v = np.asarray(v, dtype=float)
    v_star = np.asarray(v_star, dtype=float)
    omega = np.asarray(omega, dtype=float)
    V = (mi * v + mj * v_star) / (mi + mj)
    u = v - v_star
    E = channel_energy(mix, ch, u, I, I_star)
    if ch.cls == "MM":
        uprime_mag = np.sqrt(np.einsum("...k,...k->...", u, u))
        Rv = 1.0
    else:
        Rv = np.asarray(R)
        uprime_mag = np.sqrt(2.0 * Rv * E / mu)
    up = np.asarray(uprime_mag)[..., None] * omega
    vp = V + (mj / (mi + mj)) * up
    vps = V - (mi / (mi + mj)) * up
    Ip = Ips = None
    if ch.cls == "PP":
        rv = np.asarray(r)
        Ip = rv * (1.0 - Rv) * E
        Ips = (1.0 - rv) * (1.0 - Rv) * E
    elif ch.cls == "MP":
        Ips = (1.0 - Rv) * E
    elif ch.cls == "PM":
        Ip = (1.0 - Rv) * E
    return vp, vps, Ip, Ips


def collision_measure(mix, ch, R, r, I=None, I_star=None):
    """Class-dependent Jacobian weight multiplying B in the rewritten operators."""
    R = np.asarray(R, dtype=float)
    r = np.asarray(r, dtype=float)
    if np.any(R < 0.0) or np.any(R > 1.0) or np.any(r < 0.0) or np.any(r > 1.0):
        raise ValueError("R and r must lie in [0, 1]")
    di = mix.species[ch.i].dof
    dj = mix.species[ch.j].dof
    if ch.cls == "MM":
        return np.ones_like(R)
    if ch.cls == "MP":
        return (1.0 - R) ** (0.5 * dj - 1.0) * np.sqrt(R) * np.asarray(I_star) ** (0.5 * dj - 1.0)
    if ch.cls == "PM":
        return (1.0 - R) ** (0.5 * di - 1.0) * np.sqrt(R) * np.asarray(I) ** (0.5 * di - 1.0)
    return (
        r ** (0.5 * di - 1.0)
        * (1.0 - r) ** (0.5 * dj - 1.0)
        * (1.0 - R) ** (0.5 * (di + dj) - 1.0)
        * np.sqrt(R)
        * np.asarray(I) ** (0.5 * di - 1.0)
        * np.asarray(I_star) ** (0.5 * dj - 1.0)
    )


def collision_measure_rr(mix, ch, R, r):
    """The (R, r)-only part of collision_measure (no internal-energy powers)."""
    R = np.asarray(R, dtype=float)
    r = np.asarray(r, dtype=float)
    di = mix.species[ch.i].dof
    dj = mix.species[ch.j].dof
    if ch.cls == "MM":
        return np.ones_like(R)
    if ch.cls == "MP":
        return (1.0 - R) ** (0.5 * dj - 1.0) * np.sqrt(R)
    if ch.cls == "PM":
        return (1.0 - R) ** (0.5 * di - 1.0) * np.sqrt(R)
    return (
        r ** (0.5 * di - 1.0)
        * (1.0 - r) ** (0.5 * dj - 1.0)
        * (1.0 - R) ** (0.5 * (di + dj) - 1.0)
        * np.sqrt(R)
    )


def r_beta_exponent(mix, ch):
    """Shape a of the (1-R)^(a-1) factor: R ~ Beta(3/2, a) under the measure."""
    di = mix.species[ch.i].dof
    dj = mix.species[ch.j].dof
    if ch.cls == "MP":
        return 0.5 * dj
    if ch.cls == "PM":
        return 0.5 * di
    if ch.cls == "PP":
        return 0.5 * (di + dj)
    return None


def measure_rr_constant(mix, ch):
    """Integral of the (R, r, omega) part of the measure over [0,1]^2 x S^2."""
    di = mix.species[ch.i].dof
    dj = mix.species[ch.j].dof
    c = 4.0 * np.pi
    a = r_beta_exponent(mix, ch)
    if a is not None:
        c *= beta_fn(1.5, a)
    if ch.cls == "PP":
        c *= beta_fn(0.5 * di, 0.5 * dj)
    return c


def sample_params(mix, ch, rng, n=1):
    """Draw BL parameters from densities proportional to the measure factors.

    Returns (omega (n,3), R (n,), r (n,)); for MM the R column is ones.
    """
    om = rng.normal(size=(n, 3))
    om /= np.linalg.norm(om, axis=1, keepdims=True)
    a = r_beta_exponent(mix, ch)
    R = np.ones(n) if a is None else rng.beta(1.5, a, size=n)
    if ch.cls == "PP":
        di, dj = mix.species[ch.i].dof, mix.species[ch.j].dof
        r = rng.beta(0.5 * di, 0.5 * dj, size=n)
    else:
        r = np.full(n, 0.5)
    return om, R, r


def quadrature_nodes(mix, ch, n_R=8, n_r=8, sphere="lebedev26"):
    """Product rule over (R, r, omega) matched to the measure's Beta weights.

    Returns (R, wR, r, wr, omega, womega); the weights absorb the
    (1-R)^(a-1) sqrt(R) and r/(1-r) Beta factors, so
    sum wR*wr*womega * g(R, r, omega) = int g d(measure_rr).
    """
    if n_R < 1 or n_r < 1:
        raise ValueError("quadrature orders must be >= 1")
    di = mix.species[ch.i].dof
    dj = mix.species[ch.j].dof
    a = r_beta_exponent(mix, ch)
    if a is None:
        R, wR = np.array([1.0]), np.array([1.0])
    else:
        R, wR = gauss_beta(n_R, 1.5, a)
    if ch.cls == "PP":
        r, wr = gauss_beta(n_r, 0.5 * di, 0.5 * dj)
    else:
        r, wr = np.array([0.5]), np.array([1.0])
    if sphere == "lebedev26":
        om, wom = lebedev26()
    elif sphere == "oct6":
        om, wom = octahedron6()
    else:
        om, wom = sphere_product(*sphere)
    return R, wR, r, wr, om, wom
