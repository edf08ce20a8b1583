"""The linearized operator L = nu - K and its reduced kernels.

K_ij f = int (k2 - k1)(Z, Z_*) f_j(Z_*) dZ_* + int k3(Z, Z_*) f_i(Z_*) dZ_*.

All three kernels are derived from the rewritten collision operators with
the canonical kernel B = E^((1-eta)/2), by integrating out the conservation
constraints:

* k1 is closed form: C * sqrt(M_i(Z) M_j(Z_*)) * E^((1-eta)/2).
* k3 reduces to an integral over the plane orthogonal to v - v_*; the
  Gaussian angular part contracts to a Bessel factor, leaving one radial
  integral tensored with Gauss-Laguerre nodes in the two partner energies.
  The quadrature nodes map onto themselves under (Z, Z_*) exchange, so the
  evaluated kernel is symmetric to machine precision.
* k2 integrates over the post-collision partner velocity v' (plus the
  post internal energy for PP) on rays around the kernel argument; the
  energy-positivity boundary of the collision manifold cuts each ray into
  intervals handled by Gauss rules with matched endpoint powers.

Kernel values feed a dense assembly of K per (mixture, grid); the assembled
operator is symmetrized in the quadrature metric and deflated on the
discrete kernel basis, which keeps the evolution machinery dissipative.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gamma as gamma_fn
from scipy.special import i0e

from . import bl
from .model import DistributionField, check_point
from .quadrature import (
    gauss_laguerre_gen,
    gauss_legendre,
    gauss_power_interval,
    inv_r_cell_average,
    lebedev26,
    plane_basis,
    sphere_product,
)

TINY = 1e-12


@dataclass(frozen=True)
class KernelOrders:
    """Quadrature orders for pointwise kernel evaluation."""

    n_lag: int = 12      # Laguerre nodes per internal-energy variable
    n_rad: int = 16      # radial nodes per panel
    n_ang: tuple = (10, 20)  # (theta, phi) product sphere/ray rule


EVAL_ORDERS = KernelOrders(n_lag=20, n_rad=24, n_ang=(16, 32))
ASM_ORDERS = KernelOrders(n_lag=8, n_rad=10, n_ang=(6, 12))


def exp_rate_delta(mix):
    """The exponential-weight rate delta = min over pairs of
    {m_i, 1/(16 (sqrt(m_i)+sqrt(m_j))^2), 1/m_i^2}."""
    ms = [s.mass for s in mix.species]
    vals = [min(m, 1.0 / m ** 2) for m in ms]
    for mi in ms:
        for mj in ms:
            vals.append(1.0 / (16.0 * (math.sqrt(mi) + math.sqrt(mj)) ** 2))
    return min(vals)


# ---- k1: closed form -----------------------------------------------------------


def k1_batch(mix, ch, v, I, vb, Ib):
    """k1_ij at pair arrays; I/Ib may be None for monatomic sides."""
    i, j = ch.i, ch.j
    u = v - vb
    E = 0.5 * mix.mu(i, j) * np.einsum("...k,...k->...", u, u)
    if ch.cls[0] == "P":
        E = E + I
    if ch.cls[1] == "P":
        E = E + Ib
    from .collision import maxwellian_at

    Mi = maxwellian_at(mix, i, v, I)
    Mj = maxwellian_at(mix, j, vb, Ib)
    return bl.measure_rr_constant(mix, ch) * np.sqrt(Mi * Mj) * E ** (0.5 * (1.0 - mix.eta))


# ---- collision frequency nu ----------------------------------------------------


def nu_batch(mix, i, v, I=None, n_rad=32, n_ang=24, n_lag=20):
    """nu_i at a batch of phase points: sum_j of loss-side integrals vs M_j."""
    v = np.atleast_2d(np.asarray(v, dtype=float))
    speed = np.linalg.norm(v, axis=-1)
    out = np.zeros(v.shape[0])
    ct, wct = gauss_legendre(n_ang, -1.0, 1.0)
    for j in range(mix.n):
        sj = mix.species[j]
        ch = bl.channel(mix, i, j)
        mu = mix.mu(i, j)
        rmax = 9.0 / math.sqrt(sj.mass)
        r, wr = gauss_legendre(n_rad, 0.0, rmax)
        gv = (
            sj.amplitude
            / (2.0 * np.pi) ** 1.5
            * np.exp(-0.5 * sj.mass * r ** 2)
            * r ** 2
            * wr
        )
        # |u|^2 = |v|^2 - 2 |v| r cos + r^2 over (point, r, cos)
        usq = (
            speed[:, None, None] ** 2
            - 2.0 * speed[:, None, None] * r[None, :, None] * ct[None, None, :]
            + r[None, :, None] ** 2
        )
        E = 0.5 * mu * usq
        if mix.is_poly(i):
            E = E + I[:, None, None]
        if sj.polyatomic:
            x, wx = gauss_laguerre_gen(n_lag, 0.5 * sj.dof - 1.0, 1.0)
            acc = np.zeros_like(E)
            for a in range(n_lag):
                acc += wx[a] * (E + x[a]) ** (0.5 * (1.0 - mix.eta))
            acc /= gamma_fn(0.5 * sj.dof)
        else:
            acc = E ** (0.5 * (1.0 - mix.eta))
        val = np.einsum("prc,pr,c->p", acc, np.broadcast_to(gv, (v.shape[0],) + gv.shape), wct)
        out += bl.measure_rr_constant(mix, ch) * 2.0 * np.pi * val
    return out


def nu_eval(mix, i, Z):
    """Collision frequency at one phase point."""
    check_point(mix, i, Z)
    I = np.array([Z.I]) if Z.I is not None else None
    return float(nu_batch(mix, i, Z.v[None, :], I)[0])


# ---- k3: plane representation --------------------------------------------------


def _radial_rule_logE(c_floor, mu, rmax, n1, n2, peak, sigma):
    """Composite radial nodes for int_0^rmax rho g(rho) (mu rho^2/2 + c)^-s ...

    Panel 1 resolves the E-power near rho = 0 via log-spacing in
    y = mu rho^2 / 2 + c; panel 2 is Gauss-Legendre up to rmax around the
    Gaussian bump at `peak`.  c_floor, peak may be arrays (batched rows).
    Returns (rho, w) with w the plain d(rho) weights, shape (rows, n1+n2).
    """
    c = np.maximum(np.asarray(c_floor, dtype=float), 1e-14)
    rows = c.shape[0]
    rsplit = np.minimum(np.maximum(np.sqrt(2.0 * c / mu) * 8.0, 0.15 * sigma), 0.5 * rmax)
    t, wt = gauss_legendre(n1, 0.0, 1.0)
    y0 = np.log(c)
    y1 = np.log(0.5 * mu * rsplit ** 2 + c)
    y = y0[:, None] + (y1 - y0)[:, None] * t[None, :]
    ey = np.exp(y)
    rho1 = np.sqrt(np.maximum(2.0 * (ey - c[:, None]) / mu, 0.0))
    # d rho = e^y dy / (mu rho); guard the rho -> 0 endpoint
    w1 = (y1 - y0)[:, None] * wt[None, :] * ey / (mu * np.maximum(rho1, 1e-30))
    w1[rho1 < 1e-15] = 0.0
    s, ws = gauss_legendre(n2, 0.0, 1.0)
    lo = rsplit[:, None]
    hi = np.maximum(rmax * np.ones((rows, 1)), lo + 1e-12)
    rho2 = lo + (hi - lo) * s[None, :]
    w2 = (hi - lo) * ws[None, :]
    return np.concatenate([rho1, rho2], axis=1), np.concatenate([w1, w2], axis=1)


def k3_batch(mix, ch, v, I, vb, Ib, orders=EVAL_ORDERS):
    """k3_ij(Z, Z_*) at pair arrays; both arguments live in the species-i space."""
    i, j = ch.i, ch.j
    mi, mj = mix.species[i].mass, mix.species[j].mass
    mu = mix.mu(i, j)
    cj = mix.species[j].amplitude
    poly_i, poly_j = ch.cls[0] == "P", ch.cls[1] == "P"
    a = 0.5 * mix.species[i].dof - 1.0
    b = 0.5 * mix.species[j].dof - 1.0
    s_pow = 0.5 * (mix.eta + mix.species[i].dof * poly_i + mix.species[j].dof * poly_j)
    v = np.atleast_2d(v)
    vb = np.atleast_2d(vb)
    ut = v - vb
    d = np.linalg.norm(ut, axis=-1)
    d = np.maximum(d, 1e-3)  # principal-value offset for coincident velocities
    n = ut / d[:, None]
    vpar = np.einsum("pk,pk->p", v, n)
    vperp = np.sqrt(np.maximum(np.einsum("pk,pk->p", v, v) - vpar ** 2, 0.0))
    kpre = mi / mj * d
    base = 0.5 * mi * (np.einsum("pk,pk->p", v, v) - np.einsum("pk,pk->p", vb, vb))
    if poly_i:
        base = base + (I - Ib)
    cc = (mi + mj) / mj
    if poly_j:
        A3 = cj / (2.0 * np.pi) ** 1.5 * 2.0 * (0.5 * mu) ** 1.5 * cc ** 3 / (
            mi * gamma_fn(0.5 * mix.species[j].dof)
        )
        x, wx = gauss_laguerre_gen(orders.n_lag, b, 0.5)
        Ipairs = [(x[p], x[q], wx[p] * wx[q]) for p in range(len(x)) for q in range(len(x))]
    else:
        A3 = cj / (2.0 * np.pi) ** 1.5 * (0.5 * mu) ** 0.5 * cc ** 2
        Ipairs = [(None, None, 1.0)]
    pref = A3 / d
    if poly_i:
        pref = pref * (I * Ib) ** (0.5 * a)
    sigma = 1.0 / math.sqrt(mj)
    rmax = vperp + 9.0 * sigma
    out = np.zeros(v.shape[0])
    ag = 0.5 * mj
    for Is, Ips, wI in Ipairs:
        zeta = base.copy()
        if poly_j:
            zeta = zeta + (Is - Ips)
        zeta = zeta / (mi * d) + 0.5 * kpre
        efac = np.exp(-0.25 * mj * (zeta ** 2 + (zeta - kpre) ** 2))
        upar = vpar - zeta + kpre
        cfloor = 0.5 * mu * upar ** 2
        if poly_i:
            cfloor = cfloor + I
        if poly_j:
            cfloor = cfloor + Is
        rho, wr = _radial_rule_logE(cfloor, mu, np.max(rmax), orders.n_rad, orders.n_rad,
                                    vperp, sigma)
        E = 0.5 * mu * rho ** 2 + cfloor[:, None]
        gauss = np.exp(-ag * (rho - vperp[:, None]) ** 2) * i0e(2.0 * ag * vperp[:, None] * rho)
        radial = 2.0 * np.pi * np.einsum("pr,pr->p", wr, rho * gauss * E ** (-s_pow))
        out += wI * efac * radial
    return pref * out


# ---- k2: post-collision velocity representation --------------------------------


def _k2_ray_quad(A, B, C, b_pow, rmax, n_rad):
    """Nodes/weights on {rho in [0, rmax] : A rho^2 + B rho + C >= 0} per row.

    The quadratic is the derived internal energy along the ray; at interval
    ends where it vanishes the rule absorbs the (.)^b_pow endpoint factor
    (Gauss-Jacobi); w includes that power's value elsewhere, so callers
    multiply by the remaining smooth integrand only.

    Returns (rho, w, q) flattened over up to two intervals per row, where
    q is the value of (A rho^2 + B rho + C)^b_pow at the nodes divided by
    any endpoint factor already folded into w -- i.e. w * q * smooth sums
    to the integral including the full power factor.
    """
    rows = len(A)
    segs = []  # (row, r0, r1, vanish_left, vanish_right)
    for p in range(rows):
        ap, bp, cp = A[p], B[p], C[p]
        ints = []
        if abs(ap) < 1e-12:
            if abs(bp) < 1e-12:
                if cp > 0.0:
                    ints = [(0.0, rmax[p], False, False)]
            else:
                r0 = -cp / bp
                if bp > 0:
                    lo = max(r0, 0.0)
                    if lo < rmax[p]:
                        ints = [(lo, rmax[p], lo == r0, False)]
                else:
                    hi = min(r0, rmax[p])
                    if hi > 0.0:
                        ints = [(0.0, hi, False, hi == r0)]
        else:
            disc = bp * bp - 4.0 * ap * cp
            if disc <= 0.0:
                if ap > 0.0:
                    ints = [(0.0, rmax[p], False, False)]
            else:
                sq = math.sqrt(disc)
                r1 = (-bp - sq) / (2.0 * ap)
                r2 = (-bp + sq) / (2.0 * ap)
                lo_r, hi_r = min(r1, r2), max(r1, r2)
                if ap > 0.0:
                    # positive outside (lo_r, hi_r)
                    if lo_r > 0.0:
                        ints.append((0.0, min(lo_r, rmax[p]), False, min(lo_r, rmax[p]) == lo_r))
                    if hi_r < rmax[p]:
                        ints.append((max(hi_r, 0.0), rmax[p], max(hi_r, 0.0) == hi_r, False))
                else:
                    # positive inside [lo_r, hi_r]
                    lo = max(lo_r, 0.0)
                    hi = min(hi_r, rmax[p])
                    if hi > lo:
                        ints.append((lo, hi, lo == lo_r, hi == hi_r))
        for (r0, r1, vl, vr) in ints:
            if r1 - r0 > 1e-12:
                segs.append((p, r0, r1, vl, vr))
    if not segs:
        return (np.zeros((0,)),) * 3 + (np.zeros(0, dtype=np.int64),)
    rho_all, w_all, q_all, row_all = [], [], [], []
    for (p, r0, r1, vl, vr) in segs:
        if vl and vr:
            mid = 0.5 * (r0 + r1)
            pieces = [(r0, mid, "left"), (mid, r1, "right")]
        elif vl:
            pieces = [(r0, r1, "left")]
        elif vr:
            pieces = [(r0, r1, "right")]
        else:
            pieces = [(r0, r1, "none")]
        for (p0, p1, van) in pieces:
            x, w = gauss_power_interval(n_rad, b_pow if van != "none" else 0.0, p0, p1, van)
            poly = A[p] * x * x + B[p] * x + C[p]
            if van == "none":
                q = np.maximum(poly, 0.0) ** b_pow
            else:
                # endpoint factor folded into w; divide it out of the full power
                end = x - p0 if van == "left" else p1 - x
                q = (np.maximum(poly, 0.0) / np.maximum(end, 1e-300)) ** b_pow
            rho_all.append(x)
            w_all.append(w)
            q_all.append(q)
            row_all.append(np.full(len(x), p, dtype=np.int64))
    return (
        np.concatenate(rho_all),
        np.concatenate(w_all),
        np.concatenate(q_all),
        np.concatenate(row_all),
    )


def k2_batch(mix, ch, v, I, vb, Ib, orders=EVAL_ORDERS):
    """k2_ij(Z, Z_*): Z in the species-i space, Z_* in the species-j space."""
    i, j = ch.i, ch.j
    mi, mj = mix.species[i].mass, mix.species[j].mass
    if ch.cls == "MM":
        return _k2_mm(mix, ch, v, vb, orders)
    mu = mix.mu(i, j)
    kap = mi / mj
    cc = (mi + mj) / mj
    a = 0.5 * mix.species[i].dof - 1.0
    b = 0.5 * mix.species[j].dof - 1.0
    ci, cj = mix.species[i].amplitude, mix.species[j].amplitude
    v = np.atleast_2d(v)
    vb = np.atleast_2d(vb)
    P = v.shape[0]
    om, wom = sphere_product(*orders.n_ang)
    const = 2.0 * (0.5 * mu) ** 1.5 * cc ** 3 * math.sqrt(ci * cj) / (2.0 * np.pi) ** 1.5
    if ch.cls == "PP":
        s_pow = 0.5 * (mix.eta + mix.species[i].dof + mix.species[j].dof)
        const /= math.sqrt(gamma_fn(0.5 * mix.species[i].dof) * gamma_fn(0.5 * mix.species[j].dof))
        xI, wxI = gauss_laguerre_gen(orders.n_lag, a, 0.5)
        Iplist = list(zip(xI, wxI))
        pref = (np.asarray(I) ** (0.5 * a)) * (np.asarray(Ib) ** (0.5 * b))
        pow_end = b
    elif ch.cls == "MP":
        s_pow = 0.5 * (mix.eta + mix.species[j].dof)
        const /= math.sqrt(gamma_fn(0.5 * mix.species[j].dof))
        Iplist = [(None, 1.0)]
        pref = np.asarray(Ib) ** (0.5 * b)
        pow_end = b
    else:  # PM
        s_pow = 0.5 * (mix.eta + mix.species[i].dof)
        const /= math.sqrt(gamma_fn(0.5 * mix.species[i].dof))
        Iplist = [(None, 1.0)]
        pref = np.asarray(I) ** (0.5 * a)
        pow_end = a
    q0 = vb - v
    alpha = 0.25 * mi * (1.0 + kap)
    out = np.zeros(P)
    # quadratic coefficients independent of the ray direction
    A_quad = 0.5 * mi * (1.0 - kap)
    for kdir in range(len(om)):
        sig = om[kdir]
        # v' = vb + rho sig; v_* = vb + kap (q0 + rho sig)
        vb_sig = vb @ sig
        w_base = vb + kap * q0
        B_quad = mi * vb_sig - mi * (w_base @ sig)
        # exponent along the ray for the Gaussian envelope (velocity part)
        b_exp = 0.5 * (mi * vb_sig + mj * kap * (w_base @ sig))
        rho_peak = np.maximum(-b_exp / (2.0 * alpha), 0.0)
        rmax = rho_peak + 9.0 / math.sqrt(alpha)
        for Ip, wIp in Iplist:
            if ch.cls == "PP":
                C_quad = (
                    0.5 * mi * (np.einsum("pk,pk->p", vb, vb) - np.einsum("pk,pk->p", v, v))
                    + 0.5 * mj * (np.einsum("pk,pk->p", vb, vb) - np.einsum("pk,pk->p", w_base, w_base))
                    + Ib + Ip - I
                )
                E_extra = Ip + Ib
            elif ch.cls == "MP":
                C_quad = (
                    0.5 * mi * (np.einsum("pk,pk->p", vb, vb) - np.einsum("pk,pk->p", v, v))
                    + 0.5 * mj * (np.einsum("pk,pk->p", vb, vb) - np.einsum("pk,pk->p", w_base, w_base))
                    + Ib
                )
                E_extra = Ib
            else:  # PM: derived quantity is I'(rho) >= 0
                C_quad = -(
                    0.5 * mi * (np.einsum("pk,pk->p", vb, vb) - np.einsum("pk,pk->p", v, v))
                    + 0.5 * mj * (np.einsum("pk,pk->p", vb, vb) - np.einsum("pk,pk->p", w_base, w_base))
                    - I
                )
                E_extra = None
            Aq = np.full(P, A_quad) if ch.cls != "PM" else np.full(P, -A_quad)
            Bq = B_quad if ch.cls != "PM" else -B_quad
            rho, wq, qpow, rows = _k2_ray_quad(Aq, Bq, C_quad, pow_end, rmax, orders.n_rad)
            if len(rho) == 0:
                continue
            vp = vb[rows] + rho[:, None] * sig
            vstar = vb[rows] + kap * (q0[rows] + rho[:, None] * sig)
            expo = -0.25 * (
                mi * np.einsum("nk,nk->n", vp, vp) + mj * np.einsum("nk,nk->n", vstar, vstar)
            )
            deriv = Aq[rows] * rho * rho + Bq[rows] * rho + C_quad[rows]
            if ch.cls in ("PP", "MP"):
                # for PP, e^(-I'/2) and (I')^a live in the Laguerre weights
                E = 0.5 * mu * rho ** 2 + np.broadcast_to(E_extra, (P,))[rows]
            else:
                u = v[rows] - vstar
                E = 0.5 * mu * np.einsum("nk,nk->n", u, u) + I[rows]
            expo = expo - 0.5 * deriv
            vals = wq * qpow * np.exp(expo) * rho ** 2 * E ** (-s_pow)
            np.add.at(out, rows, wom[kdir] * wIp * vals)
    return const * pref * out


def _k2_mm(mix, ch, v, vb, orders):
    """Mono-mono k2: sphere form for unequal masses, plane form otherwise."""
    i, j = ch.i, ch.j
    mi, mj = mix.species[i].mass, mix.species[j].mass
    ci, cj = mix.species[i].amplitude, mix.species[j].amplitude
    mu = mix.mu(i, j)
    v = np.atleast_2d(v)
    vb = np.atleast_2d(vb)
    vt = v - vb
    dist = np.linalg.norm(vt, axis=-1)
    dist = np.maximum(dist, 1e-3)
    s_pow = 0.5 * mix.eta
    out = np.zeros(v.shape[0])
    if abs(mi - mj) > 1e-9:
        kap = mi / mj
        cc = (mi + mj) / mj
        om, wom = sphere_product(*orders.n_ang)
        center = -cc * kap / (1.0 - kap ** 2)
        radius = cc / abs(1.0 - kap ** 2)
        for k in range(len(om)):
            up = center * vt + radius * dist[:, None] * om[k]
            umag = np.linalg.norm(up, axis=-1)
            vp = vb + up
            vstar = vb + kap * (vp - v)
            u = v - vstar
            grad = up / np.maximum(umag, TINY)[:, None] + kap * u / np.maximum(
                np.linalg.norm(u, axis=-1), TINY
            )[:, None]
            E = 0.5 * mu * umag ** 2
            val = (
                (radius * dist) ** 2
                / np.maximum(umag ** 2, TINY)
                * np.maximum(E, TINY) ** (0.5 * (1.0 - mix.eta))
                * np.exp(-0.25 * (mi * np.einsum("nk,nk->n", vp, vp)
                                  + mj * np.einsum("nk,nk->n", vstar, vstar)))
                / np.maximum(np.linalg.norm(grad, axis=-1), TINY)
            )
            out += wom[k] * val
        return cc ** 3 * math.sqrt(ci * cj) / (2.0 * np.pi) ** 1.5 * out
    # equal masses: plane integral, Bessel-contracted to 1D
    m = mi
    for p in range(v.shape[0]):
        e1, e2 = plane_basis(vt[p])
        c0 = -0.5 * (np.array([(v[p] + vb[p]) @ e1, (v[p] + vb[p]) @ e2]))
        c0m = np.linalg.norm(c0)
        rho, wr = gauss_legendre(orders.n_rad * 2, 0.0, c0m + 9.0 / math.sqrt(m))
        usq = dist[p] ** 2 + rho ** 2
        E = 0.5 * mu * usq
        gauss = np.exp(-0.5 * m * (rho - c0m) ** 2) * i0e(m * c0m * rho)
        # -(m/4)(|v+w|^2+|vb+w|^2) completed in the plane variable w
        base = -0.25 * m * (v[p] @ v[p] + vb[p] @ vb[p]) + 0.5 * m * c0m ** 2
        vals = rho * gauss * E ** (0.5 * (1.0 - mix.eta)) / np.sqrt(usq)
        out[p] = 2.0 * np.pi * math.exp(base) * np.sum(wr * vals)
    return 4.0 * math.sqrt(ci * cj) / (2.0 * np.pi) ** 1.5 / dist * out


def kernel_k_eval(mix, ch, kind, Z, Zb, orders=EVAL_ORDERS):
    """Evaluate one reduced kernel k1/k2/k3 at a pair of phase points."""
    v = np.asarray(Z.v, dtype=float)[None, :]
    vb = np.asarray(Zb.v, dtype=float)[None, :]
    I = np.array([Z.I]) if Z.I is not None else None
    Ib = np.array([Zb.I]) if Zb.I is not None else None
    if kind == "k3":
        check_point(mix, ch.i, Z)
        check_point(mix, ch.i, Zb)
        return float(k3_batch(mix, ch, v, I, vb, Ib, orders)[0])
    check_point(mix, ch.i, Z)
    check_point(mix, ch.j, Zb)
    if kind == "k1":
        return float(k1_batch(mix, ch, v, I, vb, Ib)[0])
    if kind == "k2":
        return float(k2_batch(mix, ch, v, I, vb, Ib, orders)[0])
    raise ValueError(f"unknown kernel kind {kind}")


# ---- special diagonal values ----------------------------------------------------


def k3_same_point(mix, ch, v, I, orders=EVAL_ORDERS):
    """Limit of k3_ij(Z, Z_*) as Z_* -> Z for polyatomic partner j.

    The partner-energy spread collapses onto a Gaussian line integral whose
    measure cancels the 1/|v - v_*| prefactor, leaving a finite value.
    """
    i, j = ch.i, ch.j
    mi, mj = mix.species[i].mass, mix.species[j].mass
    mu = mix.mu(i, j)
    cj = mix.species[j].amplitude
    b = 0.5 * mix.species[j].dof - 1.0
    a = 0.5 * mix.species[i].dof - 1.0
    poly_i = ch.cls[0] == "P"
    s_pow = 0.5 * (mix.eta + mix.species[i].dof * poly_i + mix.species[j].dof)
    cc = (mi + mj) / mj
    A3 = cj / (2.0 * np.pi) ** 1.5 * 2.0 * (0.5 * mu) ** 1.5 * cc ** 3 / (
        mi * gamma_fn(0.5 * mix.species[j].dof)
    )
    v = np.atleast_2d(v)
    speed = np.linalg.norm(v, axis=-1)
    x, wx = gauss_laguerre_gen(orders.n_lag, 2.0 * b, 1.0)
    t, wt = gauss_legendre(2 * orders.n_rad, -9.0 / math.sqrt(mj), 9.0 / math.sqrt(mj))
    out = np.zeros(v.shape[0])
    for ax, awx in zip(x, wx):
        for at, awt in zip(t, wt):
            cfloor = 0.5 * mu * (speed - at) ** 2 + ax
            if poly_i:
                cfloor = cfloor + I
            rho, wr = _radial_rule_logE(
                cfloor, mu, 9.0 / math.sqrt(mj), orders.n_rad, orders.n_rad, 0.0,
                1.0 / math.sqrt(mj),
            )
            E = 0.5 * mu * rho ** 2 + cfloor[:, None]
            radial = 2.0 * np.pi * np.einsum(
                "pr,pr->p", wr, rho * np.exp(-0.5 * mj * rho ** 2) * E ** (-s_pow)
            )
            out += awx * awt * math.exp(-0.5 * mj * at ** 2) * np.exp(0.5 * mj * at ** 2 - 0.5
                * mj * at ** 2) * radial
    pref = A3 * mi
    if poly_i:
        pref = pref * I ** (2.0 * (0.5 * a))
    return pref * out


# ---- dense assembly --------------------------------------------------------------


def _pair_keys(grid, i, j):
    """Rotation-invariant integer keys for all (Z_i, Z_j) grid pairs."""
    h = grid.hv
    g = np.rint(grid.vflat / h).astype(np.int64)
    g2 = np.einsum("ij,ij->i", g, g)
    nI_i = grid.spec.I_points if grid.mix.is_poly(i) else 1
    nI_j = grid.spec.I_points if grid.mix.is_poly(j) else 1
    nv = g.shape[0]
    dot = g @ g.T  # (nv, nv)
    gmax = int(g2.max())
    key_v = (g2[:, None] * (gmax + 1) + g2[None, :]) * (4 * gmax + 3) + (dot + 2 * gmax + 1)
    base = key_v.astype(np.int64) * (nI_i * nI_j)
    iI = np.arange(nI_i)
    jI = np.arange(nI_j)
    sub = (iI[:, None] * nI_j + jI[None, :]).reshape(-1)
    return base, sub, nv, nI_i, nI_j


def _rep_geometry(grid, g2a, g2b, dot):
    h = grid.hv
    sa = h * np.sqrt(g2a)
    sb = h * np.sqrt(g2b)
    v = np.zeros((len(sa), 3))
    v[:, 0] = sa
    vb = np.zeros((len(sa), 3))
    with np.errstate(divide="ignore", invalid="ignore"):
        xb = np.where(sa > 0, h * h * dot / np.maximum(sa, TINY), sb)
    yb = np.sqrt(np.maximum(sb ** 2 - xb ** 2, 0.0))
    vb[:, 0] = xb
    vb[:, 1] = yb
    return v, vb


def _kernel_block(mix, grid, ch, kind, orders, rel_drop=1e-10):
    """Dense matrix of w(Z_*) * k(Z, Z_*) over the grid, deduplicated by the
    rotational invariants (|v|, |v_*|, v.v_*, I, I_*)."""
    i, j = ch.i, ch.j
    jj = i if kind == "k3" else j
    base, sub, nv, nI_i, nI_jj = (None,) * 5
    h = grid.hv
    g = np.rint(grid.vflat / h).astype(np.int64)
    g2 = np.einsum("ij,ij->i", g, g)
    gmax = int(g2.max())
    dot = (g @ g.T).astype(np.int64)
    key_v = (g2[:, None] * (gmax + 1) + g2[None, :]) * (4 * gmax + 3) + (dot + 2 * gmax + 1)
    uniq_v, inv_v = np.unique(key_v.reshape(-1), return_inverse=True)
    # representative geometry per unique velocity pair
    g2a = uniq_v // (gmax + 1) // (4 * gmax + 3)
    rem = uniq_v // (4 * gmax + 3)
    g2b = rem % (gmax + 1)
    dd = uniq_v % (4 * gmax + 3) - (2 * gmax + 1)
    vr, vbr = _rep_geometry(grid, g2a.astype(float), g2b.astype(float), dd.astype(float))
    nI_i = grid.spec.I_points if mix.is_poly(i) else 1
    nI_jj = grid.spec.I_points if mix.is_poly(jj) else 1
    Ii = grid.Inodes(i) if mix.is_poly(i) else None
    Ijj = grid.Inodes(jj) if mix.is_poly(jj) else None
    U = len(uniq_v)
    vals = np.empty((U, nI_i, nI_jj))
    kfun = {"k1": k1_batch, "k2": k2_batch, "k3": k3_batch}[kind]
    for a in range(nI_i):
        Ia = np.full(U, Ii[a]) if Ii is not None else None
        for bq in range(nI_jj):
            Ib = np.full(U, Ijj[bq]) if Ijj is not None else None
            if kind == "k1":
                vals[:, a, bq] = kfun(mix, ch, vr, Ia, vbr, Ib)
            else:
                vals[:, a, bq] = kfun(mix, ch, vr, Ia, vbr, Ib, orders)
    # correct coincident/singular velocity pairs
    same = np.nonzero((g2a == g2b) & (dd == g2a))[0]
    if kind == "k3" and len(same):
        if mix.is_poly(jj) and ch.cls[1] == "P":
            for a in range(nI_i):
                Ia = np.full(len(same), Ii[a]) if Ii is not None else None
                diag = k3_same_point(mix, ch, vr[same], Ia, orders)
                for bq in range(nI_jj):
                    vals[same, a, bq] = np.where(np.arange(nI_jj)[bq] == a, diag, 0.0)
        else:
            # genuinely 1/|u| singular: cell-average of 1/|u| times the smooth part
            d0 = 0.25 * h
            for a in range(nI_i):
                Ia = np.full(len(same), Ii[a]) if Ii is not None else None
                probe = vbr[same].copy()
                probe[:, 0] += d0
                smooth = d0 * kfun(mix, ch, vr[same], Ia, probe,
                                   np.full(len(same), Ijj[a]) if Ijj is not None else None,
                                   orders)
                diag = smooth * inv_r_cell_average((0, 0, 0)) / h
                for bq in range(nI_jj):
                    vals[same, a, bq] = np.where(bq == a, diag, 0.0) if nI_jj > 1 else diag
    if kind == "k2" and ch.cls == "MM" and abs(
        mix.species[i].mass - mix.species[j].mass
    ) < 1e-9 and len(same):
        d0 = 0.25 * h
        probe = vbr[same].copy()
        probe[:, 0] += d0
        smooth = d0 * kfun(mix, ch, vr[same], None, probe, None, orders)
        vals[same, 0, 0] = smooth * inv_r_cell_average((0, 0, 0)) / h
    # near-diagonal 1/|u| cell correction for the singular kernels
    if (kind == "k3" and not (mix.is_poly(jj) and ch.cls[1] == "P")) or (
        kind == "k2" and ch.cls == "MM" and abs(mix.species[i].mass - mix.species[j].mass) < 1e-9
    ):
        off2 = g2a + g2b - 2 * dd  # |g - gbar|^2 in cells
        near = np.nonzero((off2 > 0) & (off2 <= 8))[0]
        for p in near:
            o2 = int(off2[p])
            # decompose o2 into a representative integer offset
            found = None
            m = int(math.isqrt(o2)) + 1
            for ox in range(m + 1):
                for oy in range(ox, m + 1):
                    oz2 = o2 - ox * ox - oy * oy
                    if oz2 < 0:
                        continue
                    oz = int(math.isqrt(oz2))
                    if oz * oz == oz2 and oz >= oy:
                        found = (ox, oy, oz)
                        break
                if found:
                    break
            if found:
                corr = inv_r_cell_average(found) / (1.0 / math.sqrt(o2))
                vals[p] *= corr
    # expand back to the full block, fold the Z_* quadrature weights
    flat = vals.reshape(U, nI_i * nI_jj)
    block = flat[inv_v.reshape(nv, nv)]  # (nv, nv, nI_i * nI_jj)
    block = block.reshape(nv, nv, nI_i, nI_jj)
    wv = h ** 3
    if mix.is_poly(jj):
        wz = wv * grid.wI(jj)
        block = block * wz[None, None, None, :]
    else:
        block = block * wv
    out = np.transpose(block, (0, 2, 1, 3)).reshape(nv * nI_i, nv * nI_jj)
    return out


class LinearizedOperator:
    """Dense discretization of L = nu - K with projection and spectral tools.

    Internally the operator is stored in sqrt-weighted coordinates
    g = sqrt(w) f, symmetrized, and deflated on the discrete kernel basis
    (which the continuous L annihilates exactly)."""

    def __init__(self, mix, grid, orders=ASM_ORDERS, keep_raw=False):
        self.mix = mix
        self.grid = grid
        self.sizes = [grid.size(i) for i in range(mix.n)]
        self.offsets = np.concatenate([[0], np.cumsum(self.sizes)])
        D = self.offsets[-1]
        self.D = D
        self.nu = []
        for i in range(mix.n):
            v, I = grid.zpoints(i)
            self.nu.append(nu_batch(mix, i, v, I))
        self.nu_flat = np.concatenate(self.nu)
        self.w_flat = np.concatenate([grid.zweights(i) for i in range(mix.n)])
        self.sqw = np.sqrt(self.w_flat)
        K = np.zeros((D, D))
        for i in range(mix.n):
            sl_i = slice(self.offsets[i], self.offsets[i + 1])
            for j in range(mix.n):
                ch = bl.channel(mix, i, j)
                sl_j = slice(self.offsets[j], self.offsets[j + 1])
                b1 = _kernel_block(mix, grid, ch, "k1", orders)
                b2 = _kernel_block(mix, grid, ch, "k2", orders)
                K[sl_i, sl_j] += b2 - b1
                K[sl_i, sl_i] += _kernel_block(mix, grid, ch, "k3", orders)
        # raw operator action in plain coordinates: L f = nu f - K f
        self.K_raw = K if keep_raw else None
        Lt = (self.sqw[:, None] * K / self.sqw[None, :]) * -1.0
        Lt[np.arange(D), np.arange(D)] += self.nu_flat
        self.asym = float(np.max(np.abs(Lt - Lt.T)) / np.max(np.abs(Lt)))
        Lt = 0.5 * (Lt + Lt.T)
        # kernel basis (weighted coordinates), orthonormalized
        phis = kernel_basis(mix, grid)
        B = np.stack([np.concatenate([p[i].reshape(-1) for i in range(mix.n)]) for p in phis])
        Bw = B * self.sqw[None, :]
        qb, _ = np.linalg.qr(Bw.T)
        self.phi_w = qb[:, : B.shape[0]]
        self.raw_kernel_residual = [
            float(np.linalg.norm(Lt @ self.phi_w[:, k]) / np.linalg.norm(self.phi_w[:, k]))
            for k in range(self.phi_w.shape[1])
        ]
        P = self.phi_w @ self.phi_w.T
        self.Lt = Lt - P @ Lt - Lt @ P + P @ (Lt @ P)
        self._eig = None

    # ---- basic actions ----------------------------------------------------------

    def _to_flat(self, f):
        return np.concatenate([np.asarray(f[i]).reshape(-1) for i in range(self.mix.n)])

    def _to_field(self, x):
        out = []
        for i in range(self.mix.n):
            sl = slice(self.offsets[i], self.offsets[i + 1])
            out.append(x[sl].reshape(self.grid.shape(i)))
        return out

    def apply_L_flat(self, x):
        return (self.Lt @ (x * self.sqw)) / self.sqw

    def apply_L(self, f):
        return DistributionField(self._to_field(self.apply_L_flat(self._to_flat(f))))

    def apply_K(self, f):
        x = self._to_flat(f)
        return DistributionField(self._to_field(self.nu_flat * x - self.apply_L_flat(x)))

    def inner(self, x, y):
        return float(np.sum(self.w_flat * x * np.conj(y)).real)

    # ---- projection --------------------------------------------------------------

    def project_w(self, gw):
        """Projection onto the discrete kernel basis in weighted coordinates."""
        return self.phi_w @ (self.phi_w.T @ gw)

    def project_P_flat(self, x):
        gw = x * self.sqw
        return self.project_w(gw) / self.sqw

    def project_P(self, f):
        x = self._to_flat(f)
        Px = self.project_P_flat(x)
        coeffs = macro_coefficients(self.mix, self.grid, f)
        return (
            DistributionField(self._to_field(Px)),
            DistributionField(self._to_field(x - Px)),
            coeffs,
        )

    # ---- spectral tools ------------------------------------------------------------

    def coercivity_estimate(self, n_trials=200, seed=0):
        """min over random f of (Lf, f) / ||(I-P) f||_nu^2, plus the smallest
        nonzero generalized Rayleigh quotient of the assembled operator."""
        rng = np.random.default_rng(seed)
        best = np.inf
        for _ in range(n_trials):
            g = rng.normal(size=self.D)
            g -= self.project_w(g)
            ng = np.linalg.norm(g)
            if ng < 1e-12:
                continue
            g /= ng
            num = g @ (self.Lt @ g)
            den = np.sum(self.nu_flat * g * g)
            best = min(best, num / den)
        lam_eig = self.spectral_gap_nu()
        return {"sampled": float(best), "eig": lam_eig}

    def spectral_gap_nu(self):
        """Smallest nonzero eigenvalue of L relative to the nu-weighted norm."""
        if self._eig is None:
            import scipy.linalg as sla

            ns = np.sqrt(self.nu_flat)
            A = self.Lt / ns[:, None] / ns[None, :]
            phin = self.phi_w * ns[:, None]
            qb, _ = np.linalg.qr(phin)
            Pn = qb @ qb.T
            A = A - Pn @ A - A @ Pn + Pn @ (A @ Pn)
            w = sla.eigh(A, eigvals_only=True)
            self._eig = w
        w = self._eig
        pos = w[w > 1e-10]
        return float(pos.min()) if len(pos) else 0.0


def kernel_basis(mix, grid):
    """The n+4 discrete null fields of L: species masses, momentum, energy."""
    out = []
    for k in range(mix.n):
        fld = [np.zeros(grid.shape(i)) for i in range(mix.n)]
        fld[k] = grid.sqrt_maxwellian(k).copy()
        out.append(DistributionField(fld))
    for comp in range(3):
        fld = []
        for i in range(mix.n):
            v, I = grid.zpoints(i)
            fld.append(
                (mix.species[i].mass * v[:, comp]).reshape(grid.shape(i))
                * grid.sqrt_maxwellian(i)
            )
        out.append(DistributionField(fld))
    fld = []
    for i in range(mix.n):
        v, I = grid.zpoints(i)
        s = mix.species[i]
        psi = s.mass * np.einsum("pk,pk->p", v, v) - 3.0
        if s.polyatomic:
            psi = psi + 2.0 * I - s.dof
        fld.append(psi.reshape(grid.shape(i)) * grid.sqrt_maxwellian(i))
    out.append(DistributionField(fld))
    return out


def macro_coefficients(mix, grid, f):
    """(a_i, b, c) moments of a perturbation field in the standard scaling."""
    a = []
    b = np.zeros(3, dtype=complex)
    cnum = 0.0 + 0.0j
    cden = 0.0
    bden = 0.0
    for i in range(mix.n):
        s = mix.species[i]
        sqM = grid.sqrt_maxwellian(i).reshape(-1)
        fi = np.asarray(f[i]).reshape(-1)
        w = grid.zweights(i)
        v, I = grid.zpoints(i)
        a.append(np.sum(w * fi * sqM) / s.amplitude)
        for comp in range(3):
            b[comp] += s.mass * np.sum(w * fi * v[:, comp] * sqM)
        bden += s.mass * s.amplitude
        psi = s.mass * np.einsum("pk,pk->p", v, v) - 3.0
        if s.polyatomic:
            psi = psi + 2.0 * I - s.dof
        cnum += np.sum(w * fi * psi * sqM)
        cden += (6.0 + (2.0 * s.dof if s.polyatomic else 0.0)) * s.amplitude
    return {"a": np.array(a), "b": b / bden, "c": cnum / cden}


_OP_CACHE = {}


def operator_cache_key(mix, spec, orders):
    ms = tuple((s.mass, s.dof, s.polyatomic, s.amplitude) for s in mix.species)
    return (ms, mix.eta, spec.v_halfwidth, spec.v_points, spec.I_max, spec.I_points,
            spec.I_node_rule, orders.n_lag, orders.n_rad, orders.n_ang)


def assemble_operator(mix, grid, orders=ASM_ORDERS, keep_raw=False):
    key = operator_cache_key(mix, grid.spec, orders)
    if key not in _OP_CACHE:
        _OP_CACHE[key] = LinearizedOperator(mix, grid, orders, keep_raw)
    return _OP_CACHE[key]


# ---- weighted kernel integrals and decay scans -----------------------------------


def partner_quadrature(mix, j, n_rad=24, n_cos=16, n_phi=20, n_lag=14, vmax=None):
    """Dedicated (v_*, I_*) quadrature over the species-j phase space."""
    mass = mix.species[j].mass
    rmax = vmax if vmax is not None else 10.0 / math.sqrt(mass)
    r, wr = gauss_legendre(n_rad, 0.0, rmax)
    ct, wc = gauss_legendre(n_cos, -1.0, 1.0)
    ph = 2.0 * np.pi * (np.arange(n_phi) + 0.5) / n_phi
    st = np.sqrt(1.0 - ct ** 2)
    V = np.empty((n_rad, n_cos, n_phi, 3))
    V[..., 0] = r[:, None, None] * st[None, :, None] * np.cos(ph)[None, None, :]
    V[..., 1] = r[:, None, None] * st[None, :, None] * np.sin(ph)[None, None, :]
    V[..., 2] = (r[:, None] * ct[None, :])[:, :, None] * np.ones(n_phi)
    W = (wr * r ** 2)[:, None, None] * wc[None, :, None] * (2.0 * np.pi / n_phi) * np.ones(
        (n_rad, n_cos, n_phi)
    )
    V = V.reshape(-1, 3)
    W = W.reshape(-1)
    if mix.is_poly(j):
        x, wx = gauss_laguerre_gen(n_lag, 0.0, 0.125)
        wx = wx * np.exp(0.125 * x)
        V2 = np.repeat(V, n_lag, axis=0)
        I2 = np.tile(x, V.shape[0])
        W2 = np.repeat(W, n_lag) * np.tile(wx, V.shape[0])
        return V2, I2, W2
    return V, None, W


def weighted_kernel_integral(mix, ch, kind, Z, beta, exp_weight=True, imoment=True,
                             orders=EVAL_ORDERS, quad=None):
    """int |k(Z, Z_*)| * w_ratio * exp(delta |.|^2 / 64) * (1 + I_*)^(1/8) dZ_*.

    w_ratio = w_beta(Z)/w_beta(Z_*) with the species of Z_* set by the kind
    (k3 integrates over the species-i space).  exp_weight applies the
    lemma-style exponential with the mixture rate delta; the k2 variant uses
    |m_i v - m_j v_*| in the exponent.
    """
    from .model import weight_eval, PhasePoint

    i = ch.i
    jsp = ch.i if kind == "k3" else ch.j
    if quad is None:
        quad = partner_quadrature(mix, jsp)
    vs, Is, ws = quad
    P = vs.shape[0]
    v = np.repeat(np.asarray(Z.v, dtype=float)[None, :], P, axis=0)
    I = np.full(P, Z.I) if Z.I is not None else None
    if kind == "k1":
        kv = k1_batch(mix, ch, v, I, vs, Is)
    elif kind == "k2":
        kv = k2_batch(mix, ch, v, I, vs, Is, orders)
    else:
        kv = k3_batch(mix, ch, v, I, vs, Is, orders)
    wZ = weight_eval(mix, i, beta, Z)
    speed = np.linalg.norm(vs, axis=1)
    if mix.is_poly(jsp):
        wstar = (1.0 + speed + np.sqrt(Is)) ** beta
    else:
        wstar = (1.0 + speed) ** beta
    val = np.abs(kv) * (wZ / wstar)
    if exp_weight:
        delta = exp_rate_delta(mix)
        if kind == "k2":
            mi, mj = mix.species[ch.i].mass, mix.species[ch.j].mass
            dd = mi * v - mj * vs
        else:
            dd = v - vs
        val = val * np.exp(delta * np.einsum("pk,pk->p", dd, dd) / 64.0)
    if imoment and mix.is_poly(jsp):
        val = val * (1.0 + Is) ** 0.125
    total = float(np.sum(ws * val))
    return total


@dataclass
class KernelVerificationReport:
    channel: str
    kind: str
    beta: float
    ray: str
    samples: list          # (|v|, I, integral value)
    finite: bool
    monotone_tail: bool
    delta: float

    def to_dict(self):
        return {
            "channel": self.channel,
            "kind": self.kind,
            "beta": self.beta,
            "ray": self.ray,
            "samples": [list(map(float, s)) for s in self.samples],
            "finite": self.finite,
            "monotone_tail": self.monotone_tail,
            "delta": self.delta,
        }


def decay_scan(mix, ch, kind, beta, ray="v", points=(0.5, 2.0, 4.0, 6.0), I_base=1.0,
               orders=EVAL_ORDERS):
    """Weighted-integral samples along a |v| or I ray with trend flags."""
    from .model import PhasePoint

    jsp = ch.i if kind == "k3" else ch.j
    quad = partner_quadrature(mix, jsp)
    samples = []
    for t in points:
        if ray == "v":
            v = np.array([t, 0.0, 0.0])
            I = I_base if mix.is_poly(ch.i) else None
        else:
            v = np.array([1.0, 0.0, 0.0])
            I = t
        Z = PhasePoint(v, I)
        val = weighted_kernel_integral(mix, ch, kind, Z, beta, orders=orders, quad=quad)
        samples.append((float(np.linalg.norm(v)), float(I) if I is not None else 0.0, val))
    vals = [s[2] for s in samples]
    finite = all(np.isfinite(vals)) and max(vals) < 1e8
    monotone_tail = vals[-1] < vals[1]
    return KernelVerificationReport(
        ch.cls, kind, beta, ray, samples, finite, monotone_tail, exp_rate_delta(mix)
    )
