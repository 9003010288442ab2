"""Gallager-type exponents for the superposition ensemble.

The workhorse is the cloud function

    f(a, b, v) = sum_u P(u) [ sum_x P(x|u) W(v|x)^(a/b) ]^b

evaluated in the log domain for whole arrays of (a, b) at once.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .channel import HierarchicalEnsemble, RatePair, safe_log
from .channel import lse as logsumexp
from .errors import ZeroChannelPowerError
from .optimize import grid_refine


class Mode(str, enum.Enum):
    FULL = "full"
    ALPHA_EQ_MU = "alpha_eq_mu"
    GALLAGER74 = "gallager74"
    IID = "iid"


@dataclass(frozen=True)
class GallagerParams:
    rho: float
    lam: float
    alpha: float
    mu: float

    def __post_init__(self):
        if not self.feasible():
            raise ValueError(f"infeasible parameters {self}")

    def feasible(self, tol: float = 1e-15) -> bool:
        r, l, a, m = self.rho, self.lam, self.alpha, self.mu
        return 0 <= r <= 1 and 0 <= l <= m + tol and m <= 1 and 1 - r * l <= a + tol and a <= 1

    def as_dict(self) -> dict:
        return {"rho": self.rho, "lambda": self.lam, "alpha": self.alpha, "mu": self.mu}


@dataclass
class ExponentReport:
    value: float
    argmax: dict
    branch: str = ""
    diagnostics: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"value": self.value, "argmax": self.argmax, "branch": self.branch,
                "diagnostics": self.diagnostics}


@dataclass(frozen=True)
class GridSettings:
    """Coarse step and number of halving rounds for each search dimension count."""

    step_1d: float = 1 / 64
    step_2d: float = 1 / 64
    # 4-D search: coarser lattice, more halvings (same final resolution)
    step_4d: float = 1 / 16
    rounds: int = 3
    rounds_4d: int = 5


DEFAULT_GRID = GridSettings()


def log_f(a, b, log_pu: np.ndarray, log_pxu: np.ndarray, log_w: np.ndarray) -> np.ndarray:
    """log f(a, b, v) for broadcast arrays a, b; trailing axis indexes v.

    ``log_w`` is indexed [x, v]. Uses 0^0 = 1. A zero channel entry meeting a
    negative power raises ZeroChannelPowerError.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    a, b = np.broadcast_arrays(a, b)
    pos = b > 0
    e = np.divide(a, b, out=np.zeros_like(a), where=pos)
    e4 = e[..., None, None, None]
    lw = log_w[None, :, :]
    if np.any(e < 0) and np.any(~np.isfinite(log_w)):
        raise ZeroChannelPowerError("zero channel entry raised to a negative power")
    with np.errstate(invalid="ignore"):
        powered = np.where(e4 == 0, 0.0, e4 * lw)
    inner = logsumexp(log_pxu[:, :, None] + powered, axis=-2)  # [..., u, v]
    bb = b[..., None, None]
    with np.errstate(invalid="ignore"):
        scaled = np.where(inner == -np.inf, -np.inf, bb * inner)
    if not np.all(pos):
        # b -> 0 limit: a * max over the support of log W
        support = np.where(np.isfinite(log_pxu)[:, :, None], lw, -np.inf)
        top = np.max(support, axis=-2)
        with np.errstate(invalid="ignore"):
            lim = np.where(a[..., None, None] == 0, 0.0, a[..., None, None] * top)
        scaled = np.where(pos[..., None, None], scaled, lim)
    return logsumexp(log_pu[:, None] + scaled, axis=-2)


class CloudModel:
    """Log tables for an ensemble and one channel kernel W[x, v]."""

    def __init__(self, ens: HierarchicalEnsemble, kernel: np.ndarray):
        self.ens = ens
        self.kernel = np.asarray(kernel, dtype=float)
        self.log_pu = safe_log(ens.p_u)
        self.log_pxu = safe_log(ens.p_x_given_u)
        self.log_w = safe_log(self.kernel)

    def log_f(self, a, b) -> np.ndarray:
        return log_f(a, b, self.log_pu, self.log_pxu, self.log_w)


def f_abz(a: float, b: float, z: int, ens: HierarchicalEnsemble, p3: np.ndarray) -> float:
    if b <= 0:
        raise ValueError("b must be positive")
    return float(np.exp(CloudModel(ens, p3).log_f(a, b)[z]))


def _e0(model: CloudModel, rho, lam, alpha, mu) -> np.ndarray:
    rho, lam, alpha, mu = np.broadcast_arrays(*[np.asarray(v, dtype=float) for v in (rho, lam, alpha, mu)])
    l1 = model.log_f(1 - rho * lam, alpha)
    l2 = model.log_f(lam, mu)
    with np.errstate(invalid="ignore"):
        l2 = np.where(rho[..., None] == 0, 0.0, rho[..., None] * l2)
    return -logsumexp(l1 + l2, axis=-1)


def e0(params: GallagerParams, ens: HierarchicalEnsemble, p3: np.ndarray) -> float:
    """-log sum_z f(1 - rho lam, alpha, z) f(lam, mu, z)^rho."""
    return float(_e0(CloudModel(ens, p3), params.rho, params.lam, params.alpha, params.mu))


def _mode_params(mode: Mode, c: np.ndarray):
    """Map unit-cube coordinates onto (rho, lam, alpha, mu) for a mode."""
    rho = c[:, 0]
    if mode is Mode.FULL:
        lam = c[:, 1]
        mu = lam + c[:, 2] * (1 - lam)
        alpha = (1 - rho * lam) + c[:, 3] * rho * lam
    elif mode is Mode.ALPHA_EQ_MU:
        lam = 1 / (1 + rho)
        alpha = lam + c[:, 1] * (1 - lam)
        mu = alpha
    elif mode is Mode.GALLAGER74:
        lam = 1 / (1 + rho)
        alpha = mu = lam
    else:
        lam = 1 / (1 + rho)
        alpha = mu = np.ones_like(rho)
    return rho, lam, alpha, mu


def _mode_coords(mode: Mode, rho, lam, alpha, mu) -> np.ndarray:
    """Inverse of _mode_params for seeding (points must be feasible for the mode)."""
    if mode is Mode.FULL:
        c2 = 0.0 if lam >= 1 else (mu - lam) / (1 - lam)
        c3 = 0.0 if rho * lam == 0 else (alpha - (1 - rho * lam)) / (rho * lam)
        return np.array([rho, lam, c2, c3])
    if mode is Mode.ALPHA_EQ_MU:
        lo = 1 / (1 + rho)
        return np.array([rho, 0.0 if lo >= 1 else (alpha - lo) / (1 - lo)])
    return np.array([rho])


_MODE_DIM = {Mode.FULL: 4, Mode.ALPHA_EQ_MU: 2, Mode.GALLAGER74: 1, Mode.IID: 1}


def weak_exponent_t1(rates: RatePair, ens: HierarchicalEnsemble, p3: np.ndarray, mode: Mode = Mode.FULL,
                     grid: GridSettings = DEFAULT_GRID) -> ExponentReport:
    """Weak-user exponent of the four-parameter Gallager bound."""
    mode = Mode(mode)
    model = CloudModel(ens, p3)
    r_y, r_yz = rates.r_y, rates.r_yz

    def objective(c):
        rho, lam, alpha, mu = _mode_params(mode, c)
        return _e0(model, rho, lam, alpha, mu) - (alpha + rho * mu - 1) * r_y - rho * r_yz

    dim = _MODE_DIM[mode]
    seeds = None
    if mode is Mode.FULL:
        # restricted optima are feasible points of the full search
        seeds = []
        for sub in (Mode.ALPHA_EQ_MU, Mode.GALLAGER74, Mode.IID):
            rep = weak_exponent_t1(rates, ens, p3, sub, grid)
            a = rep.argmax
            seeds.append(_mode_coords(Mode.FULL, a["rho"], a["lambda"], a["alpha"], a["mu"]))
        res = grid_refine(objective, 4, grid.step_4d, grid.rounds_4d, seeds=np.array(seeds))
    else:
        step = grid.step_2d if dim == 2 else grid.step_1d
        res = grid_refine(objective, dim, step, grid.rounds)
    rho, lam, alpha, mu = (float(v[0]) for v in _mode_params(mode, res.x[None, :]))
    return ExponentReport(
        value=max(0.0, res.value),
        argmax={"rho": rho, "lambda": lam, "alpha": alpha, "mu": mu},
        branch=mode.value,
        diagnostics={"objective": res.value, "evaluations": res.evaluations},
    )


def gallager74_weak_direct(rho, r_yz: float, ens: HierarchicalEnsemble, p3: np.ndarray) -> np.ndarray:
    """Cloud-center channel Gallager function: -log sum_z [sum_u P(u) P4(z|u)^(1/(1+rho))]^(1+rho) - rho R_yz."""
    rho = np.asarray(rho, dtype=float)
    p4 = ens.p4(p3)
    inner = np.einsum("u,...uz->...z", ens.p_u, p4[None] ** (1 / (1 + rho[..., None, None])))
    return -np.log(np.sum(inner ** (1 + rho[..., None]), axis=-1)) - rho * r_yz


def strong_term1(r_y: float, rho, ens: HierarchicalEnsemble, p1: np.ndarray) -> np.ndarray:
    """Intra-cloud strong term: -rho R_y - log sum_y f(1, 1 + rho, y)."""
    rho = np.asarray(rho, dtype=float)
    lf = CloudModel(ens, p1).log_f(np.ones_like(rho), 1 + rho)
    return -rho * r_y - logsumexp(lf, axis=-1)


def strong_term2(r_sum: float, rho, p_x: np.ndarray, p1: np.ndarray) -> np.ndarray:
    """Single-user Gallager term: -rho R - log sum_y [sum_x P(x) P1(y|x)^(1/(1+rho))]^(1+rho)."""
    rho = np.asarray(rho, dtype=float)
    s = 1 / (1 + rho[..., None, None])
    with np.errstate(divide="ignore"):
        powered = np.where(p1 > 0, np.asarray(p1, dtype=float) ** s, 0.0)
    inner = np.einsum("x,...xy->...y", np.asarray(p_x, dtype=float), powered)
    return -rho * r_sum - np.log(np.sum(inner ** (1 + rho[..., None]), axis=-1))


def maximize_rho(fun, grid: GridSettings = DEFAULT_GRID):
    """Max over rho in [0, 1] of a vectorized function; returns (value, rho)."""
    res = grid_refine(lambda c: fun(c[:, 0]), 1, grid.step_1d, grid.rounds)
    return res.value, float(res.x[0])


def single_user_exponent(rate: float, p_x: np.ndarray, kernel: np.ndarray, grid: GridSettings = DEFAULT_GRID) -> float:
    """Random-coding exponent max_rho strong_term2 for a single-user channel."""
    val, _ = maximize_rho(lambda r: strong_term2(rate, r, p_x, kernel), grid)
    return max(0.0, val)


def strong_exponent_t1(rates: RatePair, ens: HierarchicalEnsemble, p1: np.ndarray,
                       grid: GridSettings = DEFAULT_GRID) -> ExponentReport:
    """Strong-user exponent: min of the intra-cloud and full-codebook terms."""
    v1, rho1 = maximize_rho(lambda r: strong_term1(rates.r_y, r, ens, p1), grid)
    v2, rho2 = maximize_rho(lambda r: strong_term2(rates.total, r, ens.p_x, p1), grid)
    branch = "intra_cloud" if v1 <= v2 else "full_codebook"
    return ExponentReport(
        value=max(0.0, min(v1, v2)),
        argmax={"rho_intra": rho1, "rho_full": rho2},
        branch=branch,
        diagnostics={"intra_cloud": v1, "full_codebook": v2},
    )


def gallager74_strong(rates: RatePair, ens: HierarchicalEnsemble, p1: np.ndarray,
                      grid: GridSettings = DEFAULT_GRID) -> ExponentReport:
    """Classical strong-user baseline."""
    v1, rho1 = maximize_rho(lambda r: strong_term1(rates.r_y, r, ens, p1), grid)
    v2, rho2 = maximize_rho(lambda r: strong_term1(0.0, r, ens, p1) - r * rates.r_yz, grid)
    return ExponentReport(
        value=max(0.0, min(v1, v2)),
        argmax={"rho_intra": rho1, "rho_cloud": rho2},
        branch="intra_cloud" if v1 <= v2 else "cloud",
        diagnostics={"intra_cloud": v1, "cloud": v2},
    )


def gallager74_weak(rates: RatePair, ens: HierarchicalEnsemble, p3: np.ndarray,
                    grid: GridSettings = DEFAULT_GRID) -> ExponentReport:
    return weak_exponent_t1(rates, ens, p3, Mode.GALLAGER74, grid)


def check_lambda_dominance(rho: float, alpha: float, lambda_samples, ens: HierarchicalEnsemble,
                           p3: np.ndarray, slack: float = 1e-12) -> bool:
    """True iff E0(rho, 1/(1+rho), alpha, alpha) >= E0(rho, lam, alpha, alpha) at every sample."""
    model = CloudModel(ens, p3)
    lam = np.asarray(lambda_samples, dtype=float)
    ref = _e0(model, rho, 1 / (1 + rho), alpha, alpha)
    vals = _e0(model, np.full_like(lam, rho), lam, np.full_like(lam, alpha), np.full_like(lam, alpha))
    return bool(np.all(ref >= vals - slack))
