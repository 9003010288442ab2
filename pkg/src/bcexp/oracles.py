"""Exact small-blocklength oracles for the enumerator rules, plus a tiny-code simulator.

A type-class enumerator is a sum of independent indicators, one per codeword
drawn for a cloud, so it is Binomial(m_count, p_hit) with p_hit the exact
probability that one draw lands in the conditional type class.  Every check
here sums the binomial law exactly in the log domain and compares the result
with the asymptotic rule it is meant to confirm.

Type specs are given as real pmfs and rounded to the nearest type at the
blocklength (largest-remainder rounding, which minimizes total variation).
Reports carry both the requested and the rounded type.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy import stats
from scipy.special import gammaln, xlogy

from .channel import BroadcastChannel, HierarchicalEnsemble, RatePair, lse, safe_log
from .errors import ConfigError

DEFAULT_GAP_TOL = 0.15
MAX_N = 14
MAX_CODEWORDS = 1 << 16


@dataclass(frozen=True)
class EnumeratorModel:
    n: int
    m_count: int
    p_hit: float
    s: float

    def __post_init__(self):
        if not 0 <= self.p_hit <= 1:
            raise ConfigError("p_hit: must lie in [0, 1]")
        if self.m_count < 1:
            raise ConfigError("m_count: need at least one draw")
        if not 0 <= self.s <= 1:
            raise ConfigError("s: moment order must lie in [0, 1]")


@dataclass
class SmallCode:
    n: int
    clouds: np.ndarray      # [cloud, n]
    satellites: np.ndarray  # [cloud, satellite, n]
    rng_seed: tuple

    def __post_init__(self):
        if self.clouds.shape[1] != self.n or self.satellites.shape[0] != self.clouds.shape[0] \
                or self.satellites.shape[2] != self.n:
            raise ConfigError("code tables do not match the blocklength")


def count_for_rate(n: int, rate: float) -> int:
    return max(1, int(round(math.exp(n * rate))))


def _binom_logpmf(m: int, p: float) -> np.ndarray:
    k = np.arange(m + 1)
    if p == 0:
        return np.where(k == 0, 0.0, -np.inf)
    if p == 1:
        return np.where(k == m, 0.0, -np.inf)
    return stats.binom.logpmf(k, m, p)


def binomial_fractional_moment(model: EnumeratorModel) -> float:
    """Exact log E[N^s] for N ~ Binomial(m_count, p_hit), with 0^s = 0 for every s >= 0."""
    lp = _binom_logpmf(model.m_count, model.p_hit)[1:]
    k = np.arange(1, model.m_count + 1)
    return float(lse(lp + model.s * np.log(k)))


def exact_type_probability(n: int, joint_counts, kernel) -> float:
    """Log-probability that an i.i.d. draw lands in a conditional type class.

    ``joint_counts`` is an integer table whose last axis is the drawn letter
    and whose leading axes are the conditioning letters; ``kernel`` must
    broadcast against it and give the per-letter law of the draw.
    """
    counts = np.asarray(joint_counts)
    if counts.ndim < 1 or np.any(counts < 0) or not np.all(counts == np.round(counts)):
        raise ConfigError("joint_counts: need a nonnegative integer table")
    if int(counts.sum()) != n:
        raise ConfigError(f"joint_counts: entries sum to {int(counts.sum())}, expected n={n}")
    counts = counts.astype(float)
    kern = np.broadcast_to(np.asarray(kernel, dtype=float), counts.shape)
    if np.any((counts > 0) & (kern == 0)):
        return -np.inf
    cond = counts.sum(axis=-1)
    log_size = np.sum(gammaln(cond + 1)) - np.sum(gammaln(counts + 1))
    return float(log_size + np.sum(xlogy(counts, kern)))


def round_to_type(pmf, n: int) -> np.ndarray:
    """Integer counts summing to n, closest to n*pmf in total variation."""
    pmf = np.asarray(pmf, dtype=float)
    target = pmf.ravel() * n
    base = np.floor(target + 1e-12)
    short = int(n - base.sum())
    rem = target - base
    # stable sort keeps the lower index first on equal remainders
    order = np.argsort(-rem, kind="stable")
    base[order[:short]] += 1
    return base.astype(int).reshape(pmf.shape)


def _round_columns(pmf, col_counts) -> np.ndarray:
    """Round each column of a [a, v] joint to the given integer column totals."""
    pmf = np.asarray(pmf, dtype=float)
    out = np.zeros(pmf.shape, dtype=int)
    for v, total in enumerate(col_counts):
        col = pmf[:, v]
        if total and col.sum() > 0:
            out[:, v] = round_to_type(col / col.sum(), int(total))
        elif total:
            raise ConfigError("type spec puts mass on an output letter with an empty column")
    return out


def _check_n(n: int):
    if not 1 <= n <= MAX_N:
        raise ConfigError(f"n: exact oracles support 1 <= n <= {MAX_N}")


def _report(n, requested, rounded, exact_rate, predicted_rate, **extra) -> dict:
    out = {"n": n, "requested_type": np.asarray(requested).tolist(),
           "rounded_type": np.asarray(rounded).tolist(),
           "exact_rate": exact_rate, "predicted_rate": predicted_rate,
           "gap": abs(exact_rate - predicted_rate)}
    out.update(extra)
    return out


@dataclass(frozen=True)
class SatelliteTypeSpec:
    """Satellite law P(x|u) and a joint type q[u, v, x] of (cloud, output, satellite)."""

    p_x_given_u: np.ndarray
    q_uvx: np.ndarray


def type_margin(q_uvx, p_x_given_u, r_y: float) -> float:
    """R_y + E_q log P(X|U) + H_q(X|U,V) for a joint type q[u, v, x]."""
    q = np.asarray(q_uvx, dtype=float)
    lp = safe_log(p_x_given_u)[:, None, :]
    if np.any((q > 0) & ~np.isfinite(lp)):
        return -np.inf
    q_uv = q.sum(axis=-1, keepdims=True)
    cond_h = -np.sum(xlogy(q, q)) + np.sum(xlogy(q_uv, q_uv))
    return float(r_y + np.sum(np.where(q > 0, q * np.where(np.isfinite(lp), lp, 0.0), 0.0)) + cond_h)


def moment_rate_check(n: int, r_y: float, type_spec: SatelliteTypeSpec, s: float) -> dict:
    """Exact (1/n) log E[N^s] against the two-case rule.

    The rule says the rate is s times the margin when the margin is positive
    and the full margin otherwise.  ``predicted_rate`` applies it to the exact
    first-moment rate (1/n) log(m_count p_hit), which removes the polynomial
    type-class factor and isolates the two-case behaviour; the purely
    asymptotic prediction from the per-letter margin is reported alongside.
    """
    _check_n(n)
    counts = round_to_type(type_spec.q_uvx, n)
    kernel = np.asarray(type_spec.p_x_given_u, dtype=float)[:, None, :]
    log_p = exact_type_probability(n, counts, kernel)
    m = count_for_rate(n, r_y)
    exact = binomial_fractional_moment(EnumeratorModel(n, m, float(math.exp(log_p)), s)) / n
    first = (math.log(m) + log_p) / n
    margin = type_margin(counts / n, type_spec.p_x_given_u, r_y)

    def rule(g):
        return s * g if g > 0 else g

    return _report(n, type_spec.q_uvx, counts, exact, rule(first),
                   first_moment_rate=first, margin=margin, asymptotic_rate=rule(margin),
                   asymptotic_gap=abs(exact - rule(margin)), m_count=m, s=s)


@dataclass(frozen=True)
class CloudTypeSpec:
    """Cloud law P(u) and a joint type q[v, u] of (output, cloud center)."""

    p_u: np.ndarray
    q_vu: np.ndarray


def cloud_margin(q_vu, p_u, r_yz: float) -> float:
    """R_yz + H_q(U|V) + E_q log P(U)."""
    q = np.asarray(q_vu, dtype=float)
    lp = safe_log(p_u)[None, :]
    if np.any((q > 0) & ~np.isfinite(lp)):
        return -np.inf
    q_v = q.sum(axis=1, keepdims=True)
    cond_h = -np.sum(xlogy(q, q)) + np.sum(xlogy(q_v, q_v))
    return float(r_yz + cond_h + np.sum(np.where(q > 0, q * np.where(np.isfinite(lp), lp, 0.0), 0.0)))


def _concentration(lp_k: np.ndarray, center: float, width: float) -> float:
    k = np.arange(len(lp_k))
    with np.errstate(divide="ignore"):
        logk = np.log(k)
    inside = (k >= 1) & (np.abs(logk - center) <= width)
    return float(np.exp(lse(np.where(inside, lp_k, -np.inf)))) if inside.any() else 0.0


def _count_statistics(n: int, m: int, log_p: float, margin: float) -> dict:
    """Two-case summary of a Binomial(m, p) count against its exponent.

    The finite-n exponent is the first-moment rate (1/n) log(m p).  When it
    is positive the count should concentrate: log(count) within n^(1/2) of
    n times that rate, and its typical rate E[log count | count > 0] / n
    should match.  When it is negative a single hit is the typical nonzero
    outcome and (1/n) log Pr(count = 1) should match.  ``margin`` is the
    per-letter asymptotic exponent, reported with its own gap.
    """
    lp_k = _binom_logpmf(m, float(math.exp(log_p)))
    first = (math.log(m) + log_p) / n
    log_one = float(lp_k[1]) / n
    width = n * n ** -0.5
    mass = _concentration(lp_k, n * max(first, 0.0), width)
    if first > 0:
        k = np.arange(1, m + 1)
        w = np.exp(lp_k[1:] - lse(lp_k[1:]))
        exact = float(np.sum(w * np.log(k))) / n
    else:
        exact = log_one
    rule_margin = max(margin, 0.0) if first > 0 else margin
    return {"exact_rate": exact, "predicted_rate": first, "gap": abs(exact - first),
            "first_moment_rate": first, "log_prob_one_rate": log_one,
            "concentration_mass": mass, "prob_one": float(math.exp(n * log_one)),
            "margin": margin, "asymptotic_gap": abs(exact - rule_margin)}


def _count_report(n, requested, rounded, m, st, **extra) -> dict:
    out = {"n": n, "requested_type": requested, "rounded_type": rounded, "m_count": m}
    out.update(st)
    out.update(extra)
    return out


def cloud_count_check(n: int, r_yz: float, u_type_spec: CloudTypeSpec) -> dict:
    """Cloud centers in a conditional type class: Pr(M = 1) and concentration of log M."""
    _check_n(n)
    counts = round_to_type(u_type_spec.q_vu, n)
    log_p = exact_type_probability(n, counts, np.asarray(u_type_spec.p_u, dtype=float)[None, :])
    m = count_for_rate(n, r_yz)
    mbar = cloud_margin(counts / n, u_type_spec.p_u, r_yz)
    st = _count_statistics(n, m, log_p, mbar)
    return _count_report(n, np.asarray(u_type_spec.q_vu).tolist(), counts.tolist(), m, st)


def _consistent_tables(uz_counts: np.ndarray, xz_counts: np.ndarray):
    """All integer n[u, z, x] with the given (u, z) and (x, z) margins (binary or small alphabets)."""
    u_size, z_size = uz_counts.shape
    x_size = xz_counts.shape[0]
    per_z = []
    for z in range(z_size):
        cells = []
        # compositions of each n(u, z) over x, filtered by the x-column of z
        comps = [list(_compositions(int(uz_counts[u, z]), x_size)) for u in range(u_size)]
        for choice in itertools.product(*comps):
            tab = np.array(choice)  # [u, x]
            if np.array_equal(tab.sum(axis=0), xz_counts[:, z]):
                cells.append(tab)
        per_z.append(cells)
    for combo in itertools.product(*per_z):
        yield np.stack(combo, axis=1)  # [u, z, x]


def _compositions(total: int, parts: int):
    if parts == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


def occupancy_check(n: int, r_y: float, xz_type, uz_type, ens: HierarchicalEnsemble) -> dict:
    """Satellites of one cloud landing in the conditional type class of x given z.

    ``xz_type`` is a joint pmf q[x, z] and ``uz_type`` a joint pmf q[u, z]
    sharing the z marginal.  The hit probability sums the exact type
    probabilities over every joint (u, z, x) table with those two margins.
    """
    _check_n(n)
    xz = np.asarray(xz_type, dtype=float)
    uz = np.asarray(uz_type, dtype=float)
    if np.max(np.abs(xz.sum(axis=0) - uz.sum(axis=0))) > 1e-10:
        raise ConfigError("xz_type and uz_type must share the z marginal")
    z_counts = round_to_type(uz.sum(axis=0), n)
    uz_counts = _round_columns(uz, z_counts)
    xz_counts = _round_columns(xz, z_counts)
    kernel = np.asarray(ens.p_x_given_u, dtype=float)[:, None, :]
    tables = list(_consistent_tables(uz_counts, xz_counts))
    if not tables:
        raise ConfigError("no joint type at this blocklength matches both margins")
    log_p = float(lse(np.array([exact_type_probability(n, tab, kernel) for tab in tables])))
    # asymptotic exponent: best consistent joint type on the same lattice
    exponent = max(type_margin(tab / n, ens.p_x_given_u, r_y) for tab in tables)
    m = count_for_rate(n, r_y)
    st = _count_statistics(n, m, log_p, exponent)
    occupancy = st["concentration_mass"] if st["first_moment_rate"] > 0 else st["prob_one"]
    return _count_report(n, {"xz": xz.tolist(), "uz": uz.tolist()},
                         {"xz": xz_counts.tolist(), "uz": uz_counts.tolist()}, m, st,
                         n_exponent=exponent, a_star=max(exponent, 0.0), occupancy_probability=occupancy)


# --- Monte Carlo --------------------------------------------------------------


def _draw(rng, probs: np.ndarray, shape) -> np.ndarray:
    """Draws from the rows of ``probs`` (last axis), broadcast over ``shape``."""
    cdf = np.cumsum(probs, axis=-1)
    r = rng.random(shape + (1,))
    out = (r > cdf).sum(axis=-1)
    return np.minimum(out, probs.shape[-1] - 1)


def _argmax_random(rng, scores: np.ndarray) -> int:
    best = np.flatnonzero(scores >= scores.max() - 1e-12 * max(1.0, abs(scores.max())))
    return int(best[0] if len(best) == 1 else rng.choice(best))


def draw_small_code(n: int, rates: RatePair, ens: HierarchicalEnsemble, rng, seed=()) -> SmallCode:
    m_yz = count_for_rate(n, rates.r_yz)
    m_y = count_for_rate(n, rates.r_y)
    if m_yz * m_y > MAX_CODEWORDS:
        raise ConfigError(f"codebook of {m_yz * m_y} words exceeds the {MAX_CODEWORDS} limit")
    clouds = _draw(rng, np.broadcast_to(ens.p_u, (m_yz, n, ens.u_size)), (m_yz, n))
    sat_law = ens.p_x_given_u[clouds]  # [m, n, x]
    sats = _draw(rng, np.broadcast_to(sat_law[:, None], (m_yz, m_y, n, ens.x_size)), (m_yz, m_y, n))
    return SmallCode(n, clouds, sats, tuple(seed))


def decode_strong(code: SmallCode, y, log_p1: np.ndarray, rng) -> tuple:
    """Most likely (cloud, satellite) pair for the strong output."""
    ll = log_p1[code.satellites, np.asarray(y)].sum(axis=-1)
    m, i = divmod(_argmax_random(rng, ll.ravel()), ll.shape[1])
    return int(m), int(i)


def decode_weak(code: SmallCode, z, log_p3: np.ndarray, rng) -> int:
    """Cloud with the largest average satellite likelihood for the weak output."""
    ll = log_p3[code.satellites, np.asarray(z)].sum(axis=-1)
    return _argmax_random(rng, lse(ll, axis=1))


def _clopper_pearson(k: int, trials: int, level: float = 0.95):
    a = 1 - level
    lo = 0.0 if k == 0 else float(stats.beta.ppf(a / 2, k, trials - k + 1))
    hi = 1.0 if k == trials else float(stats.beta.ppf(1 - a / 2, k + 1, trials - k))
    return lo, hi


def simulate_small_code(n: int, rates: RatePair, ens: HierarchicalEnsemble, ch: BroadcastChannel,
                        trials: int, seed: int) -> dict:
    """Fresh random code per trial, message (0, 0) sent, both users decoded optimally.

    The strong user picks the most likely satellite over the whole codebook;
    the weak user picks the cloud with the largest average satellite
    likelihood.  Ties are broken uniformly at random from the trial stream.
    """
    if trials < 1:
        raise ConfigError("trials: need at least one trial")
    count_for = (count_for_rate(n, rates.r_yz), count_for_rate(n, rates.r_y))
    if count_for[0] * count_for[1] > MAX_CODEWORDS:
        raise ConfigError(f"codebook of {count_for[0] * count_for[1]} words exceeds the {MAX_CODEWORDS} limit")
    log_p1 = safe_log(ch.p1)
    log_p3 = safe_log(ch.p3)
    kernel = ch.kernel.reshape(ch.x_size, -1)
    weak_err = strong_err = 0
    for trial in range(trials):
        rng = np.random.default_rng([seed, trial])
        code = draw_small_code(n, rates, ens, rng, (seed, trial))
        yz = _draw(rng, kernel[code.satellites[0, 0]], (n,))
        y, z = np.divmod(yz, ch.z_size)
        strong_err += decode_strong(code, y, log_p1, rng) != (0, 0)
        weak_err += decode_weak(code, z, log_p3, rng) != 0
    out = {"n": n, "trials": trials, "seed": seed, "clouds": count_for[0], "satellites": count_for[1]}
    for name, k in (("weak", weak_err), ("strong", strong_err)):
        out[f"{name}_errors"] = int(k)
        out[f"{name}_error_rate"] = k / trials
        out[f"{name}_interval"] = list(_clopper_pearson(int(k), trials))
    return out


# --- validation battery ----------------------------------------------------------


def _signed_instances(make, want_positive: int, want_negative: int, min_abs: float, rng, tries: int = 2000):
    """Draw instances until enough clearly positive and clearly negative exponents are found."""
    pos, neg = [], []
    for _ in range(tries):
        rep = make(rng)
        rate = rep["first_moment_rate"]
        if rate >= min_abs and len(pos) < want_positive:
            pos.append(rep)
        elif rate <= -min_abs and len(neg) < want_negative:
            neg.append(rep)
        if len(pos) == want_positive and len(neg) == want_negative:
            break
    return pos + neg


def validation_suite(n: int = 12, seed: int = 0, count: int = 10, tol: float = DEFAULT_GAP_TOL,
                     beta: float = 0.1, min_abs: float = 0.1) -> dict:
    """Moment, cloud-count and occupancy checks on random binary instances of both signs."""
    from .channel import make_binary_ensemble

    rng = np.random.default_rng(seed)
    ens = make_binary_ensemble(beta)
    half = count // 2

    def moment(r):
        q = r.dirichlet(np.ones(8)).reshape(2, 2, 2)
        return moment_rate_check(n, float(r.uniform(0.05, 0.7)), SatelliteTypeSpec(ens.p_x_given_u, q),
                                 float(r.uniform(0, 1)))

    def cloud(r):
        q = r.dirichlet(np.ones(4)).reshape(2, 2)
        return cloud_count_check(n, float(r.uniform(0, 0.8)), CloudTypeSpec(ens.p_u, q))

    def occupancy(r):
        quz = r.dirichlet(np.ones(4)).reshape(2, 2)
        qxz = r.dirichlet(np.ones(4)).reshape(2, 2)
        qxz = qxz / qxz.sum(axis=0) * quz.sum(axis=0)
        return occupancy_check(n, float(r.uniform(0, 0.7)), qxz, quz, ens)

    out = {}
    for name, make in (("moment", moment), ("cloud_count", cloud), ("occupancy", occupancy)):
        reps = _signed_instances(make, half, count - half, min_abs, rng)
        for rep in reps:
            ok = rep["gap"] <= tol
            if name != "moment" and rep["first_moment_rate"] > 0:
                ok = ok and rep["concentration_mass"] >= 0.99
            rep["passed"] = bool(ok)
        out[name] = reps
    out["passed"] = all(r["passed"] for k in ("moment", "cloud_count", "occupancy") for r in out[k])
    return out


def root_contract_suite(instances: int = 100, seed: int = 0, beta: float = 0.1, p_y: float = 0.05,
                        p_z: float = 0.3) -> dict:
    """Boundary roots on random feasible instances: residual, range and sign bracket at +-0.01."""
    from .channel import make_binary_ensemble, make_degraded_bsc
    from .enumerator import margin_function, solve_delta_boundary
    from .errors import NoBoundaryError

    rng = np.random.default_rng(seed)
    ens = make_binary_ensemble(beta)
    kernel = make_degraded_bsc(p_y, p_z).p3
    results = []
    while len(results) < instances:
        q_uv = rng.dirichlet(np.ones(ens.u_size * kernel.shape[1])).reshape(ens.u_size, -1)
        r_y = float(rng.uniform(0, 0.7))
        try:
            delta = solve_delta_boundary(q_uv, r_y, ens, kernel)
        except NoBoundaryError:
            continue
        g = margin_function(q_uv, r_y, ens, kernel)
        residual = abs(float(g(delta)[0]))
        lo, hi = max(delta - 0.01, 0.0), min(delta + 0.01, 1.0)
        bracket = float(g(lo)[0]) >= -1e-10 and float(g(hi)[0]) <= 1e-10
        ok = residual <= 1e-10 and 0 <= delta < 1 and bracket
        results.append({"r_y": r_y, "delta": float(delta), "residual": residual, "bracket": bool(bracket),
                        "passed": bool(ok)})
    return {"instances": results, "passed": all(r["passed"] for r in results)}
