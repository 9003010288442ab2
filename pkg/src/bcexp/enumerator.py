"""Type-class enumerator exponents.

Two evaluation paths are provided for every inner quantity:

* ``method="grid"`` follows the per-type definitions literally: tilted
  achievers, the boundary root of the margin function, and grid searches over
  conditional pmfs;
* ``method="dual"`` (default) uses closed forms obtained by minimizing the
  divergence-plus-linear objectives analytically, which leaves only low
  dimensional concave maximizations over multipliers.

Both paths are tested against each other and against brute-force grids.

Array conventions: joint pmfs over a cloud letter and an output letter are
``q_uv[u, v]``; over an input letter and an output letter ``q_xv[x, v]``;
conditional tables put the conditioning letters first.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import rel_entr, xlogy

from .channel import HierarchicalEnsemble, RatePair, safe_log
from .channel import lse as logsumexp
from .errors import DegenerateTiltError, InconsistentMarginalsError, NoBoundaryError
from .gallager import CloudModel, ExponentReport, GridSettings, DEFAULT_GRID
from .optimize import golden_max, grid_refine

ROOT_TOL = 1e-10
DELTA_CAP = 64.0
XI_MIN = 1e-6


class Combine(str, enum.Enum):
    MIN = "min"
    MAX = "max"


class Side(str, enum.Enum):
    WEAK = "weak"
    STRONG = "strong"


@dataclass(frozen=True)
class EnumeratorParams:
    rho: float
    lam: float

    def __post_init__(self):
        if self.rho < 0 or self.lam < 0 or self.rho * self.lam > 1 + 1e-15:
            raise ValueError(f"need rho, lambda >= 0 and rho*lambda <= 1, got {self}")

    @property
    def moment(self) -> float:
        """Moment order 1 - rho*lambda."""
        return 1 - self.rho * self.lam


@dataclass
class TypeContext:
    """Joint types attached to one output side; all share the output marginal q_v."""

    side: Side
    q_v: np.ndarray
    q_uv: np.ndarray | None = None
    q_xv: np.ndarray | None = None
    q_xuv: np.ndarray | None = None

    def __post_init__(self):
        self.q_v = np.asarray(self.q_v, dtype=float)
        if np.any(self.q_v < 0) or abs(self.q_v.sum() - 1) > 1e-10:
            raise ValueError("q_v is not a pmf")
        for name in ("q_uv", "q_xv", "q_xuv"):
            tab = getattr(self, name)
            if tab is None:
                continue
            tab = np.asarray(tab, dtype=float)
            setattr(self, name, tab)
            marg = tab.reshape(-1, tab.shape[-1]).sum(axis=0)
            if np.any(tab < 0) or np.max(np.abs(marg - self.q_v)) > 1e-10:
                raise InconsistentMarginalsError(f"{name} does not match q_v")


@dataclass
class BranchValue:
    value: float
    branch: str
    achiever: np.ndarray | None = None
    delta: float | None = None


@dataclass(frozen=True)
class EnumeratorSettings:
    """Resolution knobs for the enumerator searches."""

    outer_step: float = 1 / 8
    outer_rounds: int = 5
    inner_step: float = 1 / 8
    inner_rounds: int = 9
    simplex_step: float = 1 / 64
    simplex_rounds: int = 3
    golden_iters: int = 40
    rho_max: float = 1.0


DEFAULT_SETTINGS = EnumeratorSettings()


# --- tilt machinery ---------------------------------------------------------


class TiltModel(CloudModel):
    """Cloud model plus tilted-conditional statistics for kernel W[x, v]."""

    def tilt_stats(self, delta):
        """(log C, E log W, conditional divergence) per (u, v) for tilt exponents delta[..., u, v]."""
        delta = np.asarray(delta, dtype=float)
        lw = self.log_w.T[None, :, :]  # [1, v, x]
        lp = self.log_pxu[:, None, :]  # [u, 1, x]
        d = delta[..., None]
        if np.any((d < 0) & ~np.isfinite(lw) & np.isfinite(lp)):
            raise DegenerateTiltError("negative tilt on a zero channel entry")
        with np.errstate(invalid="ignore"):
            powered = np.where(d == 0, 0.0, d * lw)
        big = lp + powered
        log_c = logsumexp(big, axis=-1)
        if np.any(~np.isfinite(log_c)):
            raise DegenerateTiltError("tilt normalization vanished")
        q = np.exp(big - log_c[..., None])
        elw = np.sum(np.where(q > 0, q * np.where(np.isfinite(lw), lw, 0.0), 0.0), axis=-1)
        kdiv = delta * elw - log_c
        return log_c, elw, kdiv

    def tilt(self, delta):
        delta = np.asarray(delta, dtype=float)
        d = delta[..., None]
        with np.errstate(invalid="ignore"):
            powered = np.where(d == 0, 0.0, d * self.log_w.T[None, :, :])
        big = self.log_pxu[:, None, :] + powered
        return np.exp(big - logsumexp(big, axis=-1, keepdims=True))

    def margin_at(self, delta, q_uv, r_y):
        """g(delta) = R_y - E_Q[conditional divergence of the tilt]; delta is one scalar per batch item."""
        delta = np.asarray(delta, dtype=float)
        full = np.broadcast_to(delta[..., None, None], delta.shape + q_uv.shape[-2:])
        _, _, kdiv = self.tilt_stats(full)
        return r_y - np.sum(q_uv * kdiv, axis=(-2, -1))

    def expect(self, delta, q_uv, which: int):
        delta = np.asarray(delta, dtype=float)
        full = np.broadcast_to(delta[..., None, None], delta.shape + q_uv.shape[-2:])
        return np.sum(q_uv * self.tilt_stats(full)[which], axis=(-2, -1))

    def root(self, q_uv, r_y, lo, hi, iters: int = 200):
        """Bisection for g = 0 with g(lo) >= 0 >= g(hi) (lo < hi) or the mirrored bracket."""
        lo = np.array(lo, dtype=float)
        hi = np.array(hi, dtype=float)
        g_lo = self.margin_at(lo, q_uv, r_y)
        sign = np.where(g_lo >= 0, 1.0, -1.0)
        for _ in range(iters):
            mid = (lo + hi) / 2
            gm = sign * self.margin_at(mid, q_uv, r_y)
            lo = np.where(gm >= 0, mid, lo)
            hi = np.where(gm >= 0, hi, mid)
            if np.all(hi - lo <= 1e-15 * np.maximum(1.0, np.abs(lo))):
                break
        # pick whichever end has the smaller residual
        g_a = np.abs(self.margin_at(lo, q_uv, r_y))
        g_b = np.abs(self.margin_at(hi, q_uv, r_y))
        return np.where(g_a <= g_b, lo, hi)

    def upper_root(self, q_uv, r_y, start):
        """Boundary of the margin beyond ``start`` (where g(start) > 0).

        Searches (start, DELTA_CAP]; if the positive tilts never leave the G-set
        the boundary on the negative tilt branch is returned. NaN means the
        complement of G is empty.
        """
        start = np.asarray(start, dtype=float)
        cap = np.full_like(start, DELTA_CAP)
        g_cap = self.margin_at(cap, q_uv, r_y)
        out = np.full_like(start, np.nan)
        pos = g_cap <= 0
        if np.any(pos):
            out[pos] = self.root(q_uv[pos], r_y, start[pos], cap[pos])
        rest = ~pos
        if np.any(rest):
            neg = -cap[rest]
            g_neg = self.margin_at(neg, q_uv[rest], r_y)
            ok = g_neg < 0
            vals = np.full(neg.shape, np.nan)
            if np.any(ok):
                vals[ok] = self.root(q_uv[rest][ok], r_y, np.zeros(ok.sum()), neg[ok])
            out[rest] = vals
        return out


def _as_model(ens: HierarchicalEnsemble, kernel) -> TiltModel:
    return TiltModel(ens, np.asarray(kernel, dtype=float))


def g_margin(q_x_given_uv: np.ndarray, q_uv: np.ndarray, r_y: float, ens: HierarchicalEnsemble) -> float:
    """R_y + E_Q log P(X|U) + H_Q(X|U,V); q_x_given_uv is indexed [u, v, x]."""
    q_x = np.asarray(q_x_given_uv, dtype=float)
    q_uv = np.asarray(q_uv, dtype=float)
    w = q_uv[:, :, None] * q_x
    lp = safe_log(ens.p_x_given_u)[:, None, :]
    if np.any((w > 0) & ~np.isfinite(lp)):
        return -math.inf
    e_log_p = float(np.sum(np.where(w > 0, w * np.where(np.isfinite(lp), lp, 0.0), 0.0)))
    h = -float(np.sum(xlogy(w, q_x)))
    return r_y + e_log_p + h


def tilted_conditional(ens: HierarchicalEnsemble, kernel, v: int, u: int, delta: float) -> np.ndarray:
    """Q(x|u,v) proportional to P(x|u) W(v|x)^delta."""
    q = _as_model(ens, kernel).tilt(np.full((ens.u_size, np.shape(kernel)[1]), float(delta)))
    return q[u, v]


def solve_delta_boundary(q_uv, r_y: float, ens: HierarchicalEnsemble, kernel) -> float:
    """Root in [0, 1) of the margin along the tilt path."""
    model = _as_model(ens, kernel)
    q_uv = np.asarray(q_uv, dtype=float)[None]
    g1 = float(model.margin_at(np.ones(1), q_uv, r_y)[0])
    if g1 > 0:
        raise NoBoundaryError("tilt at exponent 1 is still inside the G-set")
    g0 = float(model.margin_at(np.zeros(1), q_uv, r_y)[0])
    if g0 <= ROOT_TOL:
        return 0.0
    return float(model.root(q_uv, r_y, np.zeros(1), np.ones(1))[0])


def margin_function(q_uv, r_y: float, ens: HierarchicalEnsemble, kernel):
    """Vectorized g(delta) for one q_uv, for diagnostics and tests."""
    model = _as_model(ens, kernel)
    q = np.asarray(q_uv, dtype=float)

    def g(delta):
        d = np.atleast_1d(np.asarray(delta, dtype=float))
        return model.margin_at(d, np.broadcast_to(q, d.shape + q.shape), r_y)

    return g


# --- per-type exponents (batched over leading axis of q_uv) ------------------


def _alpha_beta_batch(model: TiltModel, q_uv: np.ndarray, t: float, r_y: float) -> dict:
    n = q_uv.shape[0]
    s = 1.0 - t
    ones = np.ones(n)
    # alpha: unconstrained achiever is the posterior (exponent 1)
    g1 = model.margin_at(ones, q_uv, r_y)
    member = g1 > 0
    alpha = np.empty(n)
    delta_a = np.ones(n)
    if np.any(member):
        alpha[member] = s * model.expect(ones[member], q_uv[member], 0)
    if np.any(~member):
        d = model.root(q_uv[~member], r_y, np.zeros((~member).sum()), ones[~member])
        delta_a[~member] = d
        alpha[~member] = s * (-r_y + model.expect(d, q_uv[~member], 1))
    # beta: unconstrained achiever is the tilt with exponent 1 - t
    sv = np.full(n, s)
    gs = model.margin_at(sv, q_uv, r_y)
    b_member = gs > 0
    beta = np.empty(n)
    delta_b = sv.copy()
    if np.any(~b_member):
        beta[~b_member] = t * r_y + model.expect(sv[~b_member], q_uv[~b_member], 0)
    if np.any(b_member):
        d = model.upper_root(q_uv[b_member], r_y, sv[b_member])
        delta_b[b_member] = d
        with np.errstate(invalid="ignore"):
            vals = s * (-r_y + model.expect(np.nan_to_num(d), q_uv[b_member], 1))
        beta[b_member] = np.where(np.isnan(d), -np.inf, vals)
    return {"alpha": alpha, "beta": beta, "alpha_member": member, "beta_member": b_member,
            "delta_alpha": delta_a, "delta_beta": delta_b}


def _gamma_zeta_batch(model: TiltModel, q_uv: np.ndarray, rho: float, lam: float, r_y: float) -> dict:
    n = q_uv.shape[0]
    t = rho * lam
    lv = np.full(n, lam)
    g_l = model.margin_at(lv, q_uv, r_y)
    member = g_l > 0
    gamma = np.empty(n)
    delta_g = lv.copy()
    if np.any(member):
        gamma[member] = rho * (r_y + model.expect(lv[member], q_uv[member], 0))
    if np.any(~member):
        d = model.root(q_uv[~member], r_y, np.zeros((~member).sum()), lv[~member])
        delta_g[~member] = d
        gamma[~member] = t * model.expect(d, q_uv[~member], 1)
    tv = np.full(n, t)
    g_t = model.margin_at(tv, q_uv, r_y)
    z_member = g_t > 0
    zeta = np.empty(n)
    delta_z = tv.copy()
    if np.any(~z_member):
        zeta[~z_member] = r_y + model.expect(tv[~z_member], q_uv[~z_member], 0)
    if np.any(z_member):
        d = model.upper_root(q_uv[z_member], r_y, tv[z_member])
        delta_z[z_member] = d
        with np.errstate(invalid="ignore"):
            vals = t * model.expect(np.nan_to_num(d), q_uv[z_member], 1)
        zeta[z_member] = np.where(np.isnan(d), -np.inf, vals)
    return {"gamma": gamma, "zeta": zeta, "gamma_member": member, "zeta_member": z_member,
            "delta_gamma": delta_g, "delta_zeta": delta_z}


def _branch(model, q_uv, value, member, delta, member_label, boundary_label):
    d = float(delta)
    if math.isnan(d):
        return BranchValue(float(value), "empty", None, None)
    ach = model.tilt(np.full(q_uv.shape, d))
    return BranchValue(float(value), member_label if member else boundary_label, ach, d)


def alpha_beta(q_uv, rho: float, lam: float, r_y: float, ens: HierarchicalEnsemble, p3) -> dict:
    if rho * lam > 1 + 1e-12:
        raise ValueError("need rho * lambda <= 1")
    model = _as_model(ens, p3)
    q = np.asarray(q_uv, dtype=float)[None]
    r = _alpha_beta_batch(model, q, rho * lam, r_y)
    a = _branch(model, q[0], r["alpha"][0], r["alpha_member"][0], r["delta_alpha"][0], "member", "boundary")
    b = _branch(model, q[0], r["beta"][0], not r["beta_member"][0], r["delta_beta"][0], "non_member", "boundary")
    return {"alpha": a, "beta": b, "e_ab": max(a.value, b.value)}


def gamma_zeta(q_uy, rho: float, lam: float, r_y: float, ens: HierarchicalEnsemble, p1) -> dict:
    if rho * lam > 1 + 1e-12:
        raise ValueError("need rho * lambda <= 1")
    model = _as_model(ens, p1)
    q = np.asarray(q_uy, dtype=float)[None]
    r = _gamma_zeta_batch(model, q, rho, lam, r_y)
    g = _branch(model, q[0], r["gamma"][0], r["gamma_member"][0], r["delta_gamma"][0], "member", "boundary")
    z = _branch(model, q[0], r["zeta"][0], not r["zeta_member"][0], r["delta_zeta"][0], "non_member", "boundary")
    return {"gamma": g, "zeta": z, "e_gz": max(g.value, z.value)}


def mbar(q_uv, r_yz: float, ens: HierarchicalEnsemble) -> float:
    """R_yz + H_Q(U|V) + E_Q log P(U)."""
    return float(_mbar_batch(np.asarray(q_uv, dtype=float)[None], r_yz, ens)[0])


def _cloud_divergence(q_uv: np.ndarray, p_u: np.ndarray) -> np.ndarray:
    """Conditional divergence D(Q_{U|V} || P_U | Q_V), batched; +inf on unsupported mass."""
    q_v = q_uv.sum(axis=-2, keepdims=True)
    ref = p_u[:, None] * q_v
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.sum(rel_entr(q_uv, ref), axis=(-2, -1))


def _mbar_batch(q_uv, r_yz, ens):
    return r_yz - _cloud_divergence(q_uv, ens.p_u)


# --- couplings ----------------------------------------------------------------


def _coupling_divergence(qu_v: np.ndarray, qx_v: np.ndarray, p_x_given_u: np.ndarray,
                         iters: int = 5000, tol: float = 1e-13) -> np.ndarray:
    """min over couplings r(u,x) of D(r || Q(u) P(x|u)) with marginals Q(u), Q(x).

    Inputs are batched conditionals ``qu_v[..., u]`` and ``qx_v[..., x]``.
    Solved by iterative proportional fitting; +inf when no coupling exists.
    """
    qu = np.asarray(qu_v, dtype=float)
    qx = np.asarray(qx_v, dtype=float)
    if p_x_given_u.shape == (2, 2) and np.all(p_x_given_u > 0):
        return _coupling_divergence_binary(qu, qx, p_x_given_u)
    ref = qu[..., :, None] * p_x_given_u
    r = ref.copy()
    for _ in range(iters):
        cs = r.sum(axis=-2)
        r = r * np.divide(qx, cs, out=np.zeros_like(cs), where=cs > 0)[..., None, :]
        rs = r.sum(axis=-1)
        r = r * np.divide(qu, rs, out=np.zeros_like(rs), where=rs > 0)[..., :, None]
        err = np.max(np.abs(r.sum(axis=-2) - qx))
        if err < tol:
            break
    bad = np.max(np.abs(r.sum(axis=-2) - qx), axis=-1) > 1e-8
    with np.errstate(divide="ignore", invalid="ignore"):
        val = np.sum(rel_entr(r, ref), axis=(-2, -1))
    return np.where(bad, np.inf, val)


def _coupling_divergence_binary(qu, qx, pxu):
    """2x2 case: the optimal coupling has the reference cross ratio, a quadratic in r(0,0)."""
    a, b = qu[..., 0], qx[..., 0]
    k = pxu[0, 0] * pxu[1, 1] / (pxu[0, 1] * pxu[1, 0])
    lo = np.maximum(0.0, a + b - 1)
    hi = np.minimum(a, b)
    qa = 1 - k
    qb = 1 - a - b + k * (a + b)
    qc = -k * a * b
    if abs(qa) < 1e-14:
        s = np.divide(-qc, qb, out=np.zeros_like(qb), where=qb != 0)
    else:
        disc = np.sqrt(np.maximum(qb * qb - 4 * qa * qc, 0.0))
        r1 = (-qb + disc) / (2 * qa)
        r2 = (-qb - disc) / (2 * qa)
        in1 = (r1 >= lo - 1e-12) & (r1 <= hi + 1e-12)
        s = np.where(in1, r1, r2)
    s = np.clip(s, lo, hi)
    r = np.stack([np.stack([s, a - s], -1), np.stack([b - s, 1 - a - b + s], -1)], -2)
    r = np.maximum(r, 0.0)
    ref = qu[..., :, None] * pxu
    return np.sum(rel_entr(r, ref), axis=(-2, -1))


def _n_batch(qx_v, qu_v, q_v, r_y, ens):
    """N exponent for batched conditionals [..., v, x] and [..., v, u] with output law q_v."""
    k = _coupling_divergence(qu_v, qx_v, ens.p_x_given_u)  # [..., v]
    with np.errstate(invalid="ignore"):
        k = np.where(q_v > 0, k, 0.0)
    return r_y - np.sum(q_v * k, axis=-1)


def n_exponent(q_xv, q_uv, r_y: float, ens: HierarchicalEnsemble) -> float:
    """R_y + max over consistent Q_{X|UV} of [E log P(X|U) + H(X|U,V)]."""
    q_xv = np.asarray(q_xv, dtype=float)
    q_uv = np.asarray(q_uv, dtype=float)
    q_v = q_xv.sum(axis=0)
    if np.max(np.abs(q_v - q_uv.sum(axis=0))) > 1e-10:
        raise InconsistentMarginalsError("q_xv and q_uv disagree on the output marginal")
    qx_v = _conditional(q_xv.T, q_v)
    qu_v = _conditional(q_uv.T, q_v)
    val = float(_n_batch(qx_v[None], qu_v[None], q_v, r_y, ens)[0])
    if val == -np.inf:
        raise InconsistentMarginalsError("no coupling matches the requested marginals")
    return val


def _conditional(joint_vx, q_v):
    """Rows of joint[v, x] divided by q_v; uniform rows where q_v = 0."""
    k = joint_vx.shape[-1]
    den = q_v[:, None]
    return np.where(den > 0, np.divide(joint_vx, den, out=np.zeros_like(joint_vx), where=den > 0), 1.0 / k)


# --- simplex parametrization ---------------------------------------------------


def stick_break(c: np.ndarray, k: int) -> np.ndarray:
    """Map [..., k-1] unit-cube coordinates onto the k-simplex."""
    out = np.empty(c.shape[:-1] + (k,))
    rest = np.ones(c.shape[:-1])
    for i in range(k - 1):
        out[..., i] = rest * c[..., i]
        rest = rest * (1 - c[..., i])
    out[..., k - 1] = rest
    return out


def _conditional_search(fun, v_size: int, k: int, step: float, rounds: int, minimize: bool):
    """Optimize fun over conditionals Q(.|v) (batched [n, v, k]) by grid + refinement."""
    dim = v_size * (k - 1)
    if dim == 0:
        table = np.ones((1, v_size, 1))
        return float(fun(table)[0]), table[0]

    def obj(c):
        return fun(stick_break(c.reshape(len(c), v_size, k - 1), k))

    res = grid_refine(obj, dim, step, rounds, minimize=minimize)
    return res.value, stick_break(res.x.reshape(1, v_size, k - 1), k)[0]


def _joint_from(q_v, cond):
    """joint[..., a, v] from q_v[v] and cond[..., v, a]."""
    return np.swapaxes(cond * q_v[:, None], -1, -2)


# --- weak side: grid path ------------------------------------------------------------


def _e1_grid(q_z, t, r_y, model: TiltModel, ens, st: EnumeratorSettings):
    def fun(cond):
        q_uv = _joint_from(q_z, cond)
        ab = _alpha_beta_batch(model, q_uv, t, r_y)
        return _cloud_divergence(q_uv, ens.p_u) - np.maximum(ab["alpha"], ab["beta"])

    return _conditional_search(fun, q_z.size, ens.u_size, st.simplex_step, st.simplex_rounds, True)


def _e_big_batch(qx_v, q_v, rho, lam, rates, ens, qu_grid, strong: bool):
    """E(Q_{X|V}) for a batch of Q_{X|V} ([n, v, x]) against a fixed set of Q_{U|V} ([m, v, u])."""
    n, m = qx_v.shape[0], qu_grid.shape[0]
    qx = np.broadcast_to(qx_v[:, None], (n, m) + qx_v.shape[1:])
    qu = np.broadcast_to(qu_grid[None], (n, m) + qu_grid.shape[1:])
    nn = _n_batch(qx, qu, q_v, rates.r_y, ens)
    mb = _mbar_batch(_joint_from(q_v, qu_grid), rates.r_yz, ens)[None, :]
    # nn = -inf (no coupling) meets a zero weight only in the branch np.where discards
    with np.errstate(invalid="ignore"):
        if strong:
            in_val = rho * (nn + mb)
            out_val = np.where(nn > 0, rho * nn, nn) + mb
        else:
            in_val = np.where(nn > 0, rho * lam * nn, rho * nn) + rho * mb
            out_val = np.where(nn > 0, rho * lam * nn, nn) + mb
    return np.where(mb >= 0, in_val, out_val)


def _e_big_search(qx_v, q_v, rho, lam, rates, ens, st, strong):
    """max over Q_{U|V} of the E(Q_{X|V}) objective for one Q_{X|V}."""
    def fun(cond):
        return _e_big_batch(qx_v[None], q_v, rho, lam, rates, ens, cond, strong)[0]

    return _conditional_search(fun, q_v.size, ens.u_size, st.simplex_step, st.simplex_rounds, False)


def e_big_weak(q_xv, rho: float, lam: float, rates: RatePair, ens: HierarchicalEnsemble, p3=None,
               settings: EnumeratorSettings = DEFAULT_SETTINGS) -> float:
    q_xv = np.asarray(q_xv, dtype=float)
    q_v = q_xv.sum(axis=0)
    val, _ = _e_big_search(_conditional(q_xv.T, q_v), q_v, rho, lam, rates, ens, settings, False)
    return float(val)


def e_big_strong(q_xy, rho: float, rates: RatePair, ens: HierarchicalEnsemble,
                 settings: EnumeratorSettings = DEFAULT_SETTINGS) -> float:
    q_xy = np.asarray(q_xy, dtype=float)
    q_v = q_xy.sum(axis=0)
    val, _ = _e_big_search(_conditional(q_xy.T, q_v), q_v, rho, 1.0, rates, ens, settings, True)
    return float(val)


def _e_channel_grid(q_v, t, rho, lam, rates, ens, model, st, strong, coarse_step=None):
    """min over Q_{X|V} of t E log 1/W - E(Q_{X|V}) (+ t R_y on the weak side)."""
    x_size = ens.x_size
    lw = np.where(np.isfinite(model.log_w), model.log_w, -1e300)
    step = coarse_step or st.simplex_step
    # inner Q_{U|V} lattice, fixed
    dim_u = q_v.size * (ens.u_size - 1)
    if dim_u:
        from .optimize import lattice
        cu = lattice(dim_u, step)
        qu_grid = stick_break(cu.reshape(len(cu), q_v.size, ens.u_size - 1), ens.u_size)
    else:
        qu_grid = np.ones((1, q_v.size, 1))

    def ell_of(cond):
        return -np.sum(q_v * np.sum(np.where(cond > 0, cond * lw.T[None], 0.0), axis=-1), axis=-1)

    def fun(cond):
        per = max(1, 2_000_000 // len(qu_grid))
        e_big = np.concatenate([
            np.max(_e_big_batch(cond[i:i + per], q_v, rho, lam, rates, ens, qu_grid, strong), axis=1)
            for i in range(0, len(cond), per)])
        val = t * ell_of(cond) - e_big
        if not strong:
            val = val + t * rates.r_y
        return val

    _, best = _conditional_search(fun, q_v.size, x_size, step, st.simplex_rounds, True)
    # polish the inner maximization at the selected Q_{X|V}
    e_big, _ = _e_big_search(best, q_v, rho, lam, rates, ens, st, strong)
    val = t * float(ell_of(best[None])[0]) - e_big
    if not strong:
        val += t * rates.r_y
    return val, best


# --- dual closed forms -------------------------------------------------------------


def _wsum(q, lf):
    """Q-weighted sum over the trailing output axis, treating 0 * inf as 0."""
    with np.errstate(invalid="ignore"):
        return np.sum(np.where(q > 0, q * lf, 0.0), axis=-1)


def _cloud_div_at(model: TiltModel, q, s, c_n):
    """Cloud divergence of the minimizer for coefficients (s, c_N, c_m = 1); batched over c_n."""
    c_n = np.asarray(c_n, dtype=float)
    # c_n = 0 leaves the prior untouched, so the exponent value is irrelevant there
    e = np.divide(s, c_n, out=np.zeros_like(c_n), where=c_n > 0)
    ee = e[..., None, None]
    with np.errstate(invalid="ignore"):
        powered = np.where(ee == 0, 0.0, ee * model.log_w)  # [..., x, v]
    lc = logsumexp(model.log_pxu[:, :, None] + powered[..., None, :, :], axis=-2)  # [..., u, v]
    lr = model.log_pu[:, None] + c_n[..., None, None] * lc
    r = np.exp(lr - logsumexp(lr, axis=-2, keepdims=True))
    d = np.sum(rel_entr(r, model.ens.p_u[:, None]), axis=-2)  # [..., v]
    return np.sum(np.where(q > 0, q * d, 0.0), axis=-1)


def _e1_dual(q, t, r_y, model: TiltModel, iters=60):
    """Batched over q[..., v]: max over alpha in [1-t, 1]."""
    q = np.asarray(q, dtype=float)
    shape = q.shape[:-1]

    def fun(alpha):
        lf = model.log_f(np.full(alpha.shape, 1 - t), alpha)
        return -_wsum(q, lf) - (alpha - 1 + t) * r_y

    return golden_max(fun, np.full(shape, 1 - t), np.ones(shape), iters)


def _b_prime(q, t, r_y, r_yz, model: TiltModel, lo, iters=60, shift=0.0):
    """max over omega in [lo, 1] of sum_v q(v)(-log f(t, omega, v)) - omega R_y - R_yz + shift, plus validity."""
    q = np.asarray(q, dtype=float)
    shape = q.shape[:-1]

    def fun(om):
        return -_wsum(q, model.log_f(np.full(om.shape, t), om)) - om * r_y

    om, val = golden_max(fun, np.full(shape, lo), np.ones(shape), iters)
    div = _cloud_div_at(model, q, t, om)
    return om, val - r_yz + shift, div > r_yz


def _weak_a_single(q, rho, lam, rates, model, st):
    """Region-A value of the weak second term for one output law (max over mu, kappa)."""
    t = rho * lam
    mus = [lam, 1.0] if lam > 1 else [None]
    best = []
    for mu_fixed in mus:
        def obj(c, mu_fixed=mu_fixed):
            mu = np.full(len(c), mu_fixed) if mu_fixed is not None else lam + c[:, 0] * (1 - lam)
            xi = XI_MIN + c[:, -1] * (1 - XI_MIN)
            kappa = rho / xi
            lf = model.log_f(lam * xi, mu * xi)
            return -kappa * _wsum(q, lf) - rho * (mu - lam) * rates.r_y - kappa * rates.r_yz

        dim = 1 if mu_fixed is not None else 2
        best.append(grid_refine(obj, dim, st.inner_step, st.inner_rounds).value)
    return min(best)


def e1_weak(q_z, rho: float, lam: float, r_y: float, ens: HierarchicalEnsemble, p3,
            method: str = "dual", settings: EnumeratorSettings = DEFAULT_SETTINGS) -> float:
    q_z = np.asarray(q_z, dtype=float)
    t = rho * lam
    model = _as_model(ens, p3)
    if method == "grid":
        return float(_e1_grid(q_z, t, r_y, model, ens, settings)[0])
    return float(_e1_dual(q_z, t, r_y, model, settings.golden_iters)[1])


def e2_weak(q_z, rho: float, lam: float, rates: RatePair, ens: HierarchicalEnsemble, p3,
            method: str = "dual", settings: EnumeratorSettings = DEFAULT_SETTINGS, coarse_step=None) -> float:
    q_z = np.asarray(q_z, dtype=float)
    t = rho * lam
    model = _as_model(ens, p3)
    if method == "grid":
        return float(_e_channel_grid(q_z, t, rho, lam, rates, ens, model, settings, False, coarse_step)[0])
    if rho == 0:
        # region values collapse; fall back to the literal definition
        return float(_e_channel_grid(q_z, t, rho, lam, rates, ens, model, settings, False, coarse_step)[0])
    a = _weak_a_single(q_z, rho, lam, rates, model, settings)
    _, b, valid = _b_prime(q_z, t, rates.r_y, rates.r_yz, model, t, settings.golden_iters, t * rates.r_y)
    return float(min(a, b) if valid else a)


# --- strong side ------------------------------------------------------------------


def _log_g3(model: TiltModel, t):
    """log sum_x P(x) P1(y|x)^(1-t) per output letter."""
    lpx = safe_log(model.ens.p_x)
    s = 1 - t
    return logsumexp(lpx[:, None] + np.where(s == 0, 0.0, s * model.log_w), axis=0)


def _e3_closed(q, t, model):
    return -_wsum(q, _log_g3(model, t))


def _e3_grid(q_y, t, ens, model, st):
    """Per-letter brute force over joint pmfs r(u, x)."""
    lpux = safe_log(ens.p_u[:, None] * ens.p_x_given_u).ravel()
    k = lpux.size
    total = 0.0
    for y, qy in enumerate(q_y):
        if qy == 0:
            continue
        cost = -(1 - t) * np.repeat(model.log_w[None, :, y], ens.u_size, axis=0).ravel()

        def fun(cond, cost=cost):
            r = cond[:, 0, :]
            with np.errstate(divide="ignore", invalid="ignore"):
                kl = np.sum(np.where(r > 0, r * (np.log(r) - lpux), 0.0), axis=-1)
                lin = np.sum(np.where(r > 0, r * cost, 0.0), axis=-1)
            return kl + lin

        val, _ = _conditional_search(fun, 1, k, st.simplex_step, st.simplex_rounds, True)
        total += qy * val
    return total


def e3_strong(q_y, rho: float, lam: float, ens: HierarchicalEnsemble, p1, method: str = "dual",
              settings: EnumeratorSettings = DEFAULT_SETTINGS) -> float:
    q_y = np.asarray(q_y, dtype=float)
    model = _as_model(ens, p1)
    if method == "grid":
        return float(_e3_grid(q_y, rho * lam, ens, model, settings))
    return float(_e3_closed(q_y, rho * lam, model))


def _e4_dual(q, rho, t, r_y, model, iters=60):
    q = np.asarray(q, dtype=float)
    shape = q.shape[:-1]

    def fun(mu):
        return -_wsum(q, model.log_f(np.full(mu.shape, t), mu)) - mu * r_y

    return golden_max(fun, np.full(shape, rho), np.ones(shape), iters)


def _a5_dual(q, rho, t, rates, model, iters=60):
    q = np.asarray(q, dtype=float)
    shape = q.shape[:-1]

    def fun(xi):
        kappa = rho / xi
        return -kappa * _wsum(q, model.log_f(t / kappa, xi)) - rho * rates.r_y - kappa * rates.r_yz

    return golden_max(fun, np.full(shape, XI_MIN), np.ones(shape), iters)


def _e4_grid(q_y, rho, lam, r_y, ens, model, st):
    def fun(cond):
        q_uv = _joint_from(q_y, cond)
        gz = _gamma_zeta_batch(model, q_uv, rho, lam, r_y)
        return _cloud_divergence(q_uv, ens.p_u) - np.maximum(gz["gamma"], gz["zeta"])

    return _conditional_search(fun, q_y.size, ens.u_size, st.simplex_step, st.simplex_rounds, True)


def e4_strong(q_y, rho: float, lam: float, r_y: float, ens: HierarchicalEnsemble, p1, method: str = "dual",
              settings: EnumeratorSettings = DEFAULT_SETTINGS) -> float:
    q_y = np.asarray(q_y, dtype=float)
    model = _as_model(ens, p1)
    if method == "grid":
        return float(_e4_grid(q_y, rho, lam, r_y, ens, model, settings)[0])
    return float(_e4_dual(q_y, rho, rho * lam, r_y, model, settings.golden_iters)[1])


def _e5_dual(q, rho, t, rates, model, iters=60):
    _, a = _a5_dual(q, rho, t, rates, model, iters)
    _, b, valid = _b_prime(q, t, rates.r_y, rates.r_yz, model, rho, iters)
    return np.where(valid, np.minimum(a, b), a)


def e5_strong(q_y, rho: float, lam: float, rates: RatePair, ens: HierarchicalEnsemble, p1, method: str = "dual",
              settings: EnumeratorSettings = DEFAULT_SETTINGS, coarse_step=None) -> float:
    q_y = np.asarray(q_y, dtype=float)
    model = _as_model(ens, p1)
    t = rho * lam
    if method == "grid" or rho == 0:
        return float(_e_channel_grid(q_y, t, rho, lam, rates, ens, model, settings, True, coarse_step)[0])
    return float(_e5_dual(q_y, rho, t, rates, model, settings.golden_iters))


# --- full exponents ------------------------------------------------------------------


def _entropy(q):
    return -np.sum(xlogy(q, q), axis=-1)


def _output_grid(v_size, st: EnumeratorSettings):
    from .optimize import lattice
    c = lattice(v_size - 1, st.simplex_step) if v_size > 1 else np.zeros((1, 0))
    return stick_break(c, v_size)


def _restricted_min(value_fn, v_size, st: EnumeratorSettings):
    """min over output laws q with value_fn(q) -> (values, valid); +inf when none is valid."""
    qs = _output_grid(v_size, st)
    vals, valid = value_fn(qs)
    vals = np.where(valid, vals, np.inf)
    if not np.any(np.isfinite(vals)):
        return np.inf, None
    i = int(np.argmin(vals))
    best, q_best = vals[i], qs[i]
    if v_size == 2:
        # halving refinement around the incumbent on the free coordinate
        h = st.simplex_step
        for _ in range(st.simplex_rounds + 4):
            h /= 2
            c = np.clip(q_best[0] + h * np.arange(-2, 3), 0, 1)
            cand = np.stack([c, 1 - c], axis=1)
            cv, ok = value_fn(cand)
            cv = np.where(ok, cv, np.inf)
            j = int(np.argmin(cv))
            if cv[j] < best:
                best, q_best = cv[j], cand[j]
    return float(best), q_best


def _weak_point(rho, t, rates, model, st):
    """min over Q_Z of E1 + E2 - H at one (rho, t), with diagnostics."""
    lam = t / rho
    r_y, r_yz = rates.r_y, rates.r_yz

    def part1(mu_fixed):
        def obj(c):
            alpha = (1 - t) + c[:, 0] * t
            mu = np.full(len(c), mu_fixed) if mu_fixed is not None else lam + c[:, 1] * (1 - lam)
            xi = XI_MIN + c[:, -1] * (1 - XI_MIN)
            kappa = rho / xi
            l1 = model.log_f(np.full(len(c), 1 - t), alpha)
            l2 = model.log_f(lam * xi, mu * xi)
            return (-logsumexp(l1 + kappa[:, None] * l2, axis=-1) - (alpha - 1 + t) * r_y
                    - rho * (mu - lam) * r_y - kappa * r_yz)

        dim = 2 if mu_fixed is not None else 3
        return grid_refine(obj, dim, st.inner_step, st.inner_rounds)

    if lam > 1:
        runs = [part1(lam), part1(1.0)]
        res = min(runs, key=lambda r: r.value)
    else:
        res = part1(None)
    p1 = res.value

    def unres(c):
        alpha = (1 - t) + c[:, 0] * t
        om = t + c[:, 1] * (1 - t)
        l1 = model.log_f(np.full(len(c), 1 - t), alpha)
        l2 = model.log_f(np.full(len(c), t), om)
        return -logsumexp(l1 + l2, axis=-1) - (alpha + om - 1) * r_y - r_yz

    fr = grid_refine(unres, 2, st.inner_step, st.inner_rounds)
    free = fr.value
    p2 = np.inf
    if free < p1:
        # the unrestricted minimizing output law, tested for region-B validity
        alpha = (1 - t) + fr.x[0] * t
        om = t + fr.x[1] * (1 - t)
        lq = model.log_f(1 - t, alpha) + model.log_f(t, om)
        q_star = np.exp(lq - logsumexp(lq))
        if _cloud_div_at(model, q_star, t, om) > r_yz:
            p2 = free
    if p2 == np.inf and free < p1:
        def fn(qs):
            _, e1 = _e1_dual(qs, t, r_y, model, st.golden_iters)
            _, b, ok = _b_prime(qs, t, r_y, r_yz, model, t, st.golden_iters, t * r_y)
            return e1 + b - _entropy(qs), ok

        p2, _ = _restricted_min(fn, model.kernel.shape[1], st)
    return min(p1, p2), {"region_a": p1, "region_b": p2, "region_b_free": free}


def _strong_point(rho, t, rates, model, st, combine: Combine):
    r_y, r_yz = rates.r_y, rates.r_yz
    lg3 = _log_g3(model, t)
    if combine is Combine.MAX:
        def fn(qs):
            e3 = _e3_closed(qs, t, model)
            _, e4 = _e4_dual(qs, rho, t, r_y, model, st.golden_iters)
            e5 = _e5_dual(qs, rho, t, rates, model, st.golden_iters)
            return e3 + np.maximum(e4, e5) - _entropy(qs), np.ones(len(qs), bool)

        val, _ = _restricted_min(fn, model.kernel.shape[1], st)
        return val, {}

    def pa(mu):
        return -logsumexp(lg3 + model.log_f(np.full(mu.shape, t), mu), axis=-1) - mu * r_y

    def pb(xi):
        kappa = rho / xi
        return -logsumexp(lg3 + kappa[..., None] * model.log_f(t / kappa, xi), axis=-1) - rho * r_y - kappa * r_yz

    mu_a, a = golden_max(pa, np.array([rho]), np.array([1.0]), st.golden_iters)
    _, b = golden_max(pb, np.array([XI_MIN]), np.array([1.0]), st.golden_iters)
    mu_a, a, b = float(mu_a[0]), float(a[0]), float(b[0])
    c = np.inf
    if a - r_yz < min(a, b):
        lq = lg3 + model.log_f(t, mu_a)
        q_star = np.exp(lq - logsumexp(lq))
        if _cloud_div_at(model, q_star, t, mu_a) > r_yz:
            c = a - r_yz
    if c == np.inf and a - r_yz < min(a, b):
        def fn(qs):
            _, bb, ok = _b_prime(qs, t, r_y, r_yz, model, rho, st.golden_iters)
            return _e3_closed(qs, t, model) + bb - _entropy(qs), ok

        c, _ = _restricted_min(fn, model.kernel.shape[1], st)
    return min(a, b, c), {"intra": a, "region_a": b, "region_b": c}


def _outer(point_fn, st: EnumeratorSettings, seeds=None):
    """max over rho in (0, rho_max], t = rho lambda in [0, 1]."""
    cache = {}

    def obj(c):
        out = np.empty(len(c))
        for i, (cr, ct) in enumerate(c):
            key = (float(cr), float(ct))
            if key not in cache:
                rho = cr * st.rho_max
                cache[key] = 0.0 if rho == 0 else point_fn(rho, ct)[0]
            out[i] = cache[key]
        return out

    res = grid_refine(obj, 2, st.outer_step, st.outer_rounds, seeds=seeds)
    rho = float(res.x[0] * st.rho_max)
    t = float(res.x[1])
    return res, rho, t


def weak_exponent_t2(rates: RatePair, ens: HierarchicalEnsemble, p3,
                     settings: EnumeratorSettings = DEFAULT_SETTINGS, seed_params=None) -> ExponentReport:
    """Weak-user enumerator exponent; ``p3`` may also be a BroadcastChannel."""
    model = _as_model(ens, getattr(p3, "p3", p3))
    seeds = None
    if seed_params:
        seeds = np.array([[r / settings.rho_max, r * l] for r, l in seed_params if r <= settings.rho_max])
    res, rho, t = _outer(lambda r, tt: _weak_point(r, tt, rates, model, settings), settings, seeds)
    diag = _weak_point(rho, t, rates, model, settings)[1] if rho > 0 else {}
    return ExponentReport(max(0.0, res.value), {"rho": rho, "lambda": t / rho if rho else 0.0},
                          "enumerator", {"objective": res.value, **diag})


def strong_exponent_t2(rates: RatePair, ens: HierarchicalEnsemble, p1, combine_mode=Combine.MIN,
                       settings: EnumeratorSettings = DEFAULT_SETTINGS) -> ExponentReport:
    """Strong-user enumerator exponent; ``p1`` may also be a BroadcastChannel."""
    combine = Combine(combine_mode)
    model = _as_model(ens, getattr(p1, "p1", p1))
    res, rho, t = _outer(lambda r, tt: _strong_point(r, tt, rates, model, settings, combine), settings)
    diag = _strong_point(rho, t, rates, model, settings, combine)[1] if rho > 0 else {}
    return ExponentReport(max(0.0, res.value), {"rho": rho, "lambda": t / rho if rho else 0.0},
                          combine.value, {"objective": res.value, **diag})
