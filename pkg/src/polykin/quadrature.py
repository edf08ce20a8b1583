"""Quadrature rules shared by the collision and kernel integrals.

All rules return plain (nodes, weights) ndarrays so callers can tensorize
them freely.  Conventions: weights always include the full measure of the
stated integral, so sum(w * g(x)) approximates the integral directly.
"""

import numpy as np
from scipy.special import roots_genlaguerre, roots_jacobi, roots_legendre


def gauss_legendre(n, a=0.0, b=1.0):
    """Nodes/weights for int_a^b g(x) dx."""
    x, w = roots_legendre(n)
    half = 0.5 * (b - a)
    return a + half * (x + 1.0), half * w


def gauss_laguerre_gen(n, alpha=0.0, rate=1.0):
    """Nodes/weights for int_0^inf x^alpha exp(-rate*x) g(x) dx.

    The x^alpha exp(-rate*x) factor is folded into the weights; g alone is
    sampled at the nodes.
    """
    x, w = roots_genlaguerre(n, alpha)
    # substitute x = rate*t: integral = rate^{-alpha-1} * sum w g(x/rate)
    return x / rate, w / rate ** (alpha + 1.0)


def gauss_beta(n, a, b):
    """Nodes/weights on [0,1] for the Beta-type weight x^(a-1) (1-x)^(b-1).

    sum(w) equals the Beta function B(a, b); dividing by it yields a
    probability rule for Beta(a, b).
    """
    # roots_jacobi uses weight (1-t)^alpha (1+t)^beta on [-1,1]
    t, w = roots_jacobi(n, b - 1.0, a - 1.0)
    x = 0.5 * (t + 1.0)
    return x, w / 2.0 ** (a + b - 1.0)


def gauss_power_interval(n, alpha, r0, r1, vanish_at):
    """Nodes/weights on [r0,r1] for weight (distance to vanishing end)^alpha.

    vanish_at: 'left', 'right' or 'none'; absorbs an endpoint factor
    (x-r0)^alpha or (r1-x)^alpha into the weights so the remaining integrand
    is smooth.  With 'none' this is plain Gauss-Legendre.
    """
    h = r1 - r0
    if vanish_at == "none" or alpha == 0.0:
        x, w = roots_legendre(n)
        return r0 + 0.5 * h * (x + 1.0), 0.5 * h * w
    t, w = roots_jacobi(n, 0.0, alpha) if vanish_at == "left" else roots_jacobi(n, alpha, 0.0)
    x = r0 + 0.5 * h * (t + 1.0)
    # jacobi weight on [-1,1] is (1-t)^0 (1+t)^alpha (left) -> ((x-r0)*2/h)^alpha
    return x, w * (0.5 * h) ** (alpha + 1.0)


def lebedev26():
    """26-point degree-7 rule on the unit sphere; weights sum to 4*pi."""
    pts = []
    wts = []
    for k in range(3):
        for s in (1.0, -1.0):
            p = np.zeros(3)
            p[k] = s
            pts.append(p)
            wts.append(1.0 / 21.0)
    s2 = 1.0 / np.sqrt(2.0)
    for k in range(3):
        i, j = [a for a in range(3) if a != k]
        for si in (1.0, -1.0):
            for sj in (1.0, -1.0):
                p = np.zeros(3)
                p[i], p[j] = si * s2, sj * s2
                pts.append(p)
                wts.append(4.0 / 105.0)
    s3 = 1.0 / np.sqrt(3.0)
    for si in (1.0, -1.0):
        for sj in (1.0, -1.0):
            for sk in (1.0, -1.0):
                pts.append(np.array([si * s3, sj * s3, sk * s3]))
                wts.append(27.0 / 840.0)
    return np.array(pts), 4.0 * np.pi * np.array(wts)


def octahedron6():
    """6-point degree-3 sphere rule (coordinate axes); weights sum to 4*pi."""
    pts = np.vstack([np.eye(3), -np.eye(3)])
    return pts, np.full(6, 4.0 * np.pi / 6.0)


def sphere_product(n_theta, n_phi):
    """Gauss-Legendre x uniform-phi product rule on S^2; weights sum to 4*pi."""
    ct, wt = roots_legendre(n_theta)
    st = np.sqrt(1.0 - ct ** 2)
    phi = 2.0 * np.pi * (np.arange(n_phi) + 0.5) / n_phi
    cp, sp = np.cos(phi), np.sin(phi)
    pts = np.empty((n_theta * n_phi, 3))
    pts[:, 0] = np.outer(st, cp).ravel()
    pts[:, 1] = np.outer(st, sp).ravel()
    pts[:, 2] = np.repeat(ct, n_phi)
    w = np.repeat(wt, n_phi) * (2.0 * np.pi / n_phi)
    return pts, w


def circle_rule(n):
    """Uniform rule on the unit circle; weights sum to 2*pi."""
    phi = 2.0 * np.pi * (np.arange(n) + 0.5) / n
    return np.cos(phi), np.sin(phi), np.full(n, 2.0 * np.pi / n)


def plane_basis(n):
    """Two unit vectors spanning the plane orthogonal to n (n need not be unit)."""
    n = np.asarray(n, dtype=float)
    k = int(np.argmin(np.abs(n)))
    a = np.zeros(3)
    a[k] = 1.0
    e1 = np.cross(n, a)
    e1 = e1 / np.linalg.norm(e1)
    e2 = np.cross(n, e1)
    e2 = e2 / np.linalg.norm(e2)
    return e1, e2


def pairwise_sum(a, axis=None):
    """Deterministic reduction; np.sum is pairwise for float64 arrays."""
    return np.sum(a, axis=axis)


# mean of 1/|r| over the unit cube centered at the origin
_INV_R_SELF = 2.3800774234764316
_INV_R_CELL = {}


def inv_r_cell_average(offset_cells, refine=16):
    """Mean of 1/|r| over a unit cube centered at integer offset (ox,oy,oz).

    Used for singularity-corrected trapezoid weights of 1/|u| kernels: the
    midpoint value 1/|offset| is replaced by the exact cell average.  Values
    are cached; the (0,0,0) cell is the analytically finite self term.
    """
    key = tuple(sorted(abs(int(o)) for o in offset_cells))
    if key == (0, 0, 0):
        return _INV_R_SELF
    if key in _INV_R_CELL:
        return _INV_R_CELL[key]
    t = (np.arange(refine) + 0.5) / refine - 0.5
    X, Y, Z = np.meshgrid(key[0] + t, key[1] + t, key[2] + t, indexing="ij")
    r = np.sqrt(X ** 2 + Y ** 2 + Z ** 2)
    val = float(np.mean(1.0 / r))
    _INV_R_CELL[key] = val
    return val
