"""Species/mixture data model, grids, Maxwellians, weights and moments.

Phase space conventions: a monatomic species lives on v in R^3, a polyatomic
one on (v, I) with internal energy I >= 0.  Grid fields are stored as numpy
arrays of shape (Nv, Nv, Nv) or (Nv, Nv, Nv, NI); the velocity grid is
uniform and symmetric about 0, the I grid uses cell midpoints of [0, I_max]
so I = 0 is never a node.
"""

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .quadrature import gauss_laguerre_gen, pairwise_sum

TWO_PI_32 = (2.0 * np.pi) ** 1.5


@dataclass(frozen=True)
class Species:
    """One mixture component; dof is the internal degree count (>= 2)."""

    index: int
    mass: float
    dof: float = 2.0
    polyatomic: bool = False
    amplitude: float = 1.0

    def __post_init__(self):
        if self.mass <= 0.0:
            raise ValueError(f"species {self.index}: mass must be positive")
        if self.amplitude <= 0.0:
            raise ValueError(f"species {self.index}: amplitude must be positive")
        if self.dof < 2.0:
            raise ValueError(f"species {self.index}: dof must be >= 2")
        if not self.polyatomic and self.dof != 2.0:
            # bookkeeping convention: monatomic species carry dof = 2 exactly
            raise ValueError(f"species {self.index}: monatomic species must have dof == 2")


@dataclass(frozen=True)
class Mixture:
    """Ordered species list, monatomic block first, plus the potential exponent."""

    species: tuple
    eta: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.eta < 1.0:
            raise ValueError("eta must lie in [0, 1)")
        flags = [s.polyatomic for s in self.species]
        p = flags.count(False)
        if flags != [False] * p + [True] * (len(flags) - p):
            raise ValueError("species must be ordered monatomic first, then polyatomic")
        for k, s in enumerate(self.species):
            if s.index != k:
                raise ValueError("species indices must be 0..n-1 in order")

    @property
    def n(self):
        return len(self.species)

    @property
    def p(self):
        return sum(1 for s in self.species if not s.polyatomic)

    def is_poly(self, i):
        return self.species[i].polyatomic

    def mu(self, i, j):
        mi, mj = self.species[i].mass, self.species[j].mass
        return mi * mj / (mi + mj)


def mixture(masses, dofs=None, polyatomic=None, amplitudes=None, eta=0.5):
    """Convenience constructor from plain sequences."""
    n = len(masses)
    dofs = [2.0] * n if dofs is None else list(dofs)
    polyatomic = [d > 2.0 for d in dofs] if polyatomic is None else list(polyatomic)
    amplitudes = [1.0] * n if amplitudes is None else list(amplitudes)
    sp = tuple(
        Species(k, float(masses[k]), float(dofs[k]), bool(polyatomic[k]), float(amplitudes[k]))
        for k in range(n)
    )
    return Mixture(sp, float(eta))


@dataclass(frozen=True)
class PhasePoint:
    """Velocity plus optional internal energy; I present iff species is polyatomic."""

    v: np.ndarray
    I: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "v", np.asarray(self.v, dtype=float))
        if self.v.shape != (3,):
            raise ValueError("v must be a 3-vector")
        if self.I is not None and self.I < 0.0:
            raise ValueError("internal energy must be nonnegative")


def check_point(mix, i, Z):
    has_I = Z.I is not None
    if has_I != mix.is_poly(i):
        raise ValueError(
            f"PhasePoint shape mismatch: species {i} "
            f"{'requires' if mix.is_poly(i) else 'forbids'} an internal energy"
        )


@dataclass(frozen=True)
class GridSpec:
    """Phase-space discretization parameters.

    I_node_rule 'uniform' stores fields at midpoints of [0, I_max] (simple,
    transport friendly); 'gauss_laguerre' places the I nodes at generalized
    Laguerre points, which integrates Maxwellian-weighted moments to near
    machine precision.
    """

    v_halfwidth: float
    v_points: int
    I_max: float = 30.0
    I_points: int = 64
    I_node_rule: str = "uniform"
    n_laguerre: int = 16

    def __post_init__(self):
        if self.v_halfwidth <= 0.0 or self.I_max <= 0.0:
            raise ValueError("grid extents must be positive")
        if self.v_points < 3 or self.v_points % 2 == 0:
            raise ValueError("v_points must be odd and >= 3")
        if self.I_points < 1:
            raise ValueError("I_points must be >= 1")
        if self.I_node_rule not in ("uniform", "gauss_laguerre"):
            raise ValueError("I_node_rule must be 'uniform' or 'gauss_laguerre'")


def default_gridspec(mix, v_points=33, I_points=64, I_max=30.0):
    m_min = min(s.mass for s in mix.species)
    return GridSpec(8.0 / math.sqrt(m_min), v_points, I_max, I_points)


class Grid:
    """Concrete grid: nodes, quadrature weights and cached Maxwellians."""

    def __init__(self, mix: Mixture, spec: GridSpec):
        self.mix = mix
        self.spec = spec
        n = spec.v_points
        self.v1 = np.linspace(-spec.v_halfwidth, spec.v_halfwidth, n)
        self.hv = self.v1[1] - self.v1[0]
        V = np.stack(np.meshgrid(self.v1, self.v1, self.v1, indexing="ij"), axis=-1)
        self.vflat = V.reshape(-1, 3)
        self.vsq = np.einsum("ij,ij->i", self.vflat, self.vflat)
        self.hI = spec.I_max / spec.I_points
        self._Inodes = []
        self._wI = []
        for i in range(mix.n):
            if not mix.is_poly(i):
                self._Inodes.append(None)
                self._wI.append(None)
            elif spec.I_node_rule == "uniform":
                self._Inodes.append((np.arange(spec.I_points) + 0.5) * self.hI)
                self._wI.append(np.full(spec.I_points, self.hI))
            else:
                # nodes matched to the species measure I^(dof/2-1) e^-I; the
                # weights below integrate plain dI against decaying fields
                alpha = 0.5 * mix.species[i].dof - 1.0
                x, w = gauss_laguerre_gen(spec.I_points, alpha, 1.0)
                self._Inodes.append(x)
                self._wI.append(w * x ** (-alpha) * np.exp(x))
        self.lag_nodes, self.lag_w = gauss_laguerre_gen(spec.n_laguerre, 0.0, 1.0)
        self._maxw = [self._maxwellian_grid(i) for i in range(mix.n)]
        self._sqrt_maxw = [np.sqrt(m) for m in self._maxw]

    def Inodes(self, i):
        return self._Inodes[i]

    def wI(self, i):
        return self._wI[i]

    # ---- shapes and weights -------------------------------------------------

    def shape(self, i):
        nv = self.spec.v_points
        if self.mix.is_poly(i):
            return (nv, nv, nv, self.spec.I_points)
        return (nv, nv, nv)

    def size(self, i):
        return int(np.prod(self.shape(i)))

    def zweights(self, i):
        """Flat quadrature weights over the species-i nodes."""
        w = self.hv ** 3
        if self.mix.is_poly(i):
            return np.tile(w * self.wI(i), self.vflat.shape[0])
        return np.full(self.vflat.shape[0], w)

    def zpoints(self, i):
        """Flat arrays (v (N,3), I (N,) or None) enumerating species-i nodes."""
        if self.mix.is_poly(i):
            v = np.repeat(self.vflat, self.spec.I_points, axis=0)
            I = np.tile(self.Inodes(i), self.vflat.shape[0])
            return v, I
        return self.vflat, None

    # ---- Maxwellians --------------------------------------------------------

    def _maxwellian_grid(self, i):
        s = self.mix.species[i]
        gv = s.amplitude / TWO_PI_32 * np.exp(-0.5 * s.mass * self.vsq)
        nv = self.spec.v_points
        if not s.polyatomic:
            return gv.reshape(nv, nv, nv)
        In = self.Inodes(i)
        gI = In ** (0.5 * s.dof - 1.0) * np.exp(-In) / math.gamma(0.5 * s.dof)
        return (gv[:, None] * gI[None, :]).reshape(nv, nv, nv, self.spec.I_points)

    def maxwellian(self, i):
        return self._maxw[i]

    def sqrt_maxwellian(self, i):
        return self._sqrt_maxw[i]

    def maxwellian_field(self):
        return DistributionField([m.copy() for m in self._maxw])

    def weight_w(self, i, beta):
        """Polynomial weight w_beta on the species-i grid."""
        r = np.sqrt(self.vsq)
        if self.mix.is_poly(i):
            w = (1.0 + r[:, None] + np.sqrt(self.Inodes(i))[None, :]) ** beta
            return w.reshape(self.shape(i))
        return ((1.0 + r) ** beta).reshape(self.shape(i))

    # ---- reductions ---------------------------------------------------------

    def integrate(self, i, g):
        g = np.asarray(g).reshape(-1)
        if self.mix.is_poly(i):
            gI = pairwise_sum(g.reshape(-1, self.spec.I_points) * self.wI(i), axis=1)
            return self.hv ** 3 * pairwise_sum(gI)
        return self.hv ** 3 * pairwise_sum(g)

    def inner(self, i, f, g):
        return self.integrate(i, np.asarray(f) * np.asarray(g))


class DistributionField:
    """Per-species grid densities (states F, f, h)."""

    def __init__(self, arrays: Sequence[np.ndarray]):
        self.arrays = [np.asarray(a) for a in arrays]
        for a in self.arrays:
            if not np.all(np.isfinite(a)):
                raise ValueError("field entries must be finite")

    def __getitem__(self, i):
        return self.arrays[i]

    def __len__(self):
        return len(self.arrays)

    def copy(self):
        return DistributionField([a.copy() for a in self.arrays])

    @staticmethod
    def zeros(grid):
        return DistributionField([np.zeros(grid.shape(i)) for i in range(grid.mix.n)])

    def scaled(self, s):
        return DistributionField([s * a for a in self.arrays])

    def plus(self, other, s=1.0):
        return DistributionField([a + s * b for a, b in zip(self.arrays, other.arrays)])

    def norm_inf(self):
        return max(float(np.max(np.abs(a))) for a in self.arrays)

    def norm_l2(self, grid):
        return math.sqrt(sum(grid.integrate(i, a * a) for i, a in enumerate(self.arrays)))


# ---- pointwise operations ----------------------------------------------------


def maxwellian_eval(mix, i, Z: PhasePoint):
    """Equilibrium density M_i at a phase point."""
    check_point(mix, i, Z)
    s = mix.species[i]
    g = s.amplitude / TWO_PI_32 * math.exp(-0.5 * s.mass * float(Z.v @ Z.v))
    if not s.polyatomic:
        return g
    a = 0.5 * s.dof - 1.0
    if Z.I == 0.0:
        return g / math.gamma(0.5 * s.dof) if a == 0.0 else 0.0
    return g * Z.I ** a * math.exp(-Z.I) / math.gamma(0.5 * s.dof)


def weight_eval(mix, i, beta, Z: PhasePoint):
    """Polynomial weight w_beta = (1+|v|)^beta resp. (1+|v|+sqrt(I))^beta."""
    if beta < 0.0:
        raise ValueError("beta must be nonnegative")
    check_point(mix, i, Z)
    r = math.sqrt(float(Z.v @ Z.v))
    if mix.is_poly(i):
        return (1.0 + r + math.sqrt(Z.I)) ** beta
    return (1.0 + r) ** beta


def invariant_moments(mix, grid, F: DistributionField):
    """Collision-invariant moments: per-species mass, total momentum, energy.

    The energy integrand is m_i |v|^2 + 2 I for polyatomic species (the
    physically conserved combination).
    """
    masses = []
    mom = np.zeros(3)
    en = 0.0
    wv = grid.hv ** 3
    for i in range(mix.n):
        s = mix.species[i]
        if s.polyatomic:
            nI = grid.spec.I_points
            a2 = F[i].reshape(-1, nI)
            wIi = grid.wI(i)
            dens = pairwise_sum(a2 * wIi, axis=1)
            masses.append(wv * pairwise_sum(dens))
            mom += wv * s.mass * np.array([pairwise_sum(vc * dens) for vc in grid.vflat.T])
            en += wv * s.mass * pairwise_sum(grid.vsq * dens)
            en += wv * 2.0 * pairwise_sum(a2 @ (wIi * grid.Inodes(i)))
        else:
            a = F[i].reshape(-1)
            masses.append(wv * pairwise_sum(a))
            mom += wv * s.mass * np.array([pairwise_sum(vc * a) for vc in grid.vflat.T])
            en += wv * s.mass * pairwise_sum(grid.vsq * a)
    return {"mass": np.array(masses), "momentum": mom, "energy": float(en)}


# ---- configuration -----------------------------------------------------------


def load_config(path):
    """Read a TOML or JSON scenario/mixture config into a plain dict."""
    text = open(path, "rb").read()
    if str(path).endswith(".json"):
        return json.loads(text.decode())
    try:
        import tomllib  # py >= 3.11
    except ModuleNotFoundError:
        import tomli as tomllib
    return tomllib.loads(text.decode())


def mixture_from_config(cfg):
    species = cfg["species"]
    masses = [s["mass"] for s in species]
    dofs = [s.get("dof", 2.0) for s in species]
    poly = [s.get("polyatomic", d > 2.0) for s, d in zip(species, dofs)]
    amps = [s.get("amplitude", 1.0) for s in species]
    return mixture(masses, dofs, poly, amps, cfg.get("eta", 0.5))


def gridspec_from_config(cfg, mix):
    g = cfg.get("grid", {})
    hw = g.get("v_halfwidth")
    if hw is None:
        hw = 8.0 / math.sqrt(min(s.mass for s in mix.species))
    return GridSpec(
        float(hw),
        int(g.get("v_points", 33)),
        float(g.get("I_max", 30.0)),
        int(g.get("I_points", 64)),
        str(g.get("I_node_rule", "uniform")),
        int(g.get("n_laguerre", 16)),
    )
