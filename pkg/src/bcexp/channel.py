"""Finite-alphabet broadcast channel and superposition-ensemble model.

Conventions used across the package:

* kernels are stored with the input letter on the first axis, so ``W[x, y, z]``,
  ``p1[x, y]`` and ``p3[x, z]``;
* the satellite law is stored as ``p_x_given_u[u, x]``;
* every quantity is in nats.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.special import xlogy

from .errors import ConfigError, UnsupportedMassError

ROW_TOL = 1e-12
MARKOV_TOL = 1e-9

AXIS_NAMES = ("X", "U", "Y", "Z")


def _as_prob_table(arr, name: str) -> np.ndarray:
    out = np.array(arr, dtype=float)
    if not np.all(np.isfinite(out)):
        raise ConfigError(f"{name}: entries must be finite numbers")
    if np.any(out < 0):
        bad = np.argwhere(out < 0)[0]
        raise ConfigError(f"{name}: negative probability at index {tuple(int(i) for i in bad)}")
    return out


def _check_rows(table: np.ndarray, name: str) -> None:
    # last axes (all but the first) must sum to one for every leading index
    sums = table.reshape(table.shape[0], -1).sum(axis=1)
    for i, s in enumerate(sums):
        if abs(s - 1.0) > ROW_TOL:
            raise ConfigError(f"{name}: row {i} sums to {s!r}, expected 1")


def safe_log(arr) -> np.ndarray:
    """Elementwise log with log(0) = -inf and no warnings."""
    arr = np.asarray(arr, dtype=float)
    with np.errstate(divide="ignore"):
        return np.log(arr)


def h2(p) -> np.ndarray:
    """Binary entropy in bits."""
    p = np.asarray(p, dtype=float)
    return -(xlogy(p, p) + xlogy(1 - p, 1 - p)) / math.log(2)


def bsc(p: float) -> np.ndarray:
    return np.array([[1 - p, p], [p, 1 - p]])


def conv(a: float, b: float) -> float:
    """Binary convolution a*b = a(1-b) + (1-a)b."""
    return a * (1 - b) + (1 - a) * b


@dataclass(frozen=True)
class BroadcastChannel:
    """Joint kernel ``W[x, y, z]`` with the strong and weak marginals."""

    kernel: np.ndarray

    def __post_init__(self):
        k = _as_prob_table(self.kernel, "kernel")
        if k.ndim != 3:
            raise ConfigError("kernel: expected a table indexed [x][y][z]")
        _check_rows(k, "kernel")
        k.setflags(write=False)
        object.__setattr__(self, "kernel", k)

    @property
    def x_size(self) -> int:
        return self.kernel.shape[0]

    @property
    def y_size(self) -> int:
        return self.kernel.shape[1]

    @property
    def z_size(self) -> int:
        return self.kernel.shape[2]

    @property
    def p1(self) -> np.ndarray:
        return self.kernel.sum(axis=2)

    @property
    def p3(self) -> np.ndarray:
        return weak_marginal(self)

    def markov_gap(self) -> float:
        """Largest deviation of W from P1(y|x) P(z|y), the X->Y->Z factorization."""
        p1 = self.p1
        # P(z|y) from the joint with a uniform input
        pyz = self.kernel.sum(axis=0)
        py = pyz.sum(axis=1, keepdims=True)
        pz_y = np.divide(pyz, py, out=np.zeros_like(pyz), where=py > 0)
        return float(np.max(np.abs(self.kernel - p1[:, :, None] * pz_y[None, :, :])))


@dataclass(frozen=True)
class HierarchicalEnsemble:
    """Cloud-center law ``p_u`` and satellite law ``p_x_given_u[u, x]``."""

    p_u: np.ndarray
    p_x_given_u: np.ndarray

    def __post_init__(self):
        pu = _as_prob_table(self.p_u, "p_u").reshape(-1)
        pxu = _as_prob_table(self.p_x_given_u, "p_x_given_u")
        if pxu.ndim != 2 or pxu.shape[0] != pu.size:
            raise ConfigError("p_x_given_u: expected one row per cloud letter")
        if abs(pu.sum() - 1) > ROW_TOL:
            raise ConfigError(f"p_u: sums to {pu.sum()!r}, expected 1")
        _check_rows(pxu, "p_x_given_u")
        pu.setflags(write=False)
        pxu.setflags(write=False)
        object.__setattr__(self, "p_u", pu)
        object.__setattr__(self, "p_x_given_u", pxu)

    @property
    def u_size(self) -> int:
        return self.p_u.size

    @property
    def x_size(self) -> int:
        return self.p_x_given_u.shape[1]

    @property
    def p_x(self) -> np.ndarray:
        return self.p_u @ self.p_x_given_u

    def p4(self, p3: np.ndarray) -> np.ndarray:
        """Cloud-center to weak-output kernel P4(z|u)."""
        return self.p_x_given_u @ p3

    def collapsed(self) -> "HierarchicalEnsemble":
        """Same input law with a trivial cloud alphabet."""
        return HierarchicalEnsemble(np.ones(1), self.p_x[None, :])


@dataclass(frozen=True)
class RatePair:
    r_y: float
    r_yz: float

    def __post_init__(self):
        for name in ("r_y", "r_yz"):
            v = float(getattr(self, name))
            if not math.isfinite(v) or v < 0:
                raise ConfigError(f"{name}: must be a finite nonnegative rate in nats")
            object.__setattr__(self, name, v)

    @property
    def total(self) -> float:
        return self.r_y + self.r_yz


@dataclass(frozen=True)
class DegradedBscSpec:
    p_y: float
    p_z: float
    beta: float

    def __post_init__(self):
        if not (0 <= self.p_y < self.p_z < 0.5):
            raise ConfigError("p_y/p_z: need 0 <= p_y < p_z < 1/2 for a degraded pair")
        if not (0 <= self.beta <= 0.5):
            raise ConfigError("beta: must lie in [0, 1/2]")

    @property
    def cascade(self) -> float:
        return (self.p_z - self.p_y) / (1 - 2 * self.p_y)

    def channel(self) -> BroadcastChannel:
        return make_degraded_bsc(self.p_y, self.p_z)

    def ensemble(self) -> HierarchicalEnsemble:
        return make_binary_ensemble(self.beta)


def make_degraded_bsc(p_y: float, p_z: float) -> BroadcastChannel:
    """Cascade BSC(p_y) followed by BSC((p_z - p_y)/(1 - 2 p_y))."""
    if not (0 <= p_y < p_z < 0.5):
        raise ConfigError("p_y/p_z: need 0 <= p_y < p_z < 1/2 for a degraded pair")
    a = (p_z - p_y) / (1 - 2 * p_y)
    w = bsc(p_y)[:, :, None] * bsc(a)[None, :, :]
    return BroadcastChannel(w)


def weak_marginal(ch: BroadcastChannel) -> np.ndarray:
    return ch.kernel.sum(axis=1)


def make_binary_ensemble(beta: float) -> HierarchicalEnsemble:
    if not (0 <= beta <= 0.5):
        raise ConfigError("beta: must lie in [0, 1/2]")
    return HierarchicalEnsemble(np.array([0.5, 0.5]), bsc(beta))


def bsc_capacity_corner(spec: DegradedBscSpec) -> dict:
    ln2 = math.log(2)
    r_yz = ln2 * (1 - float(h2(conv(spec.beta, spec.p_z))))
    r_y = ln2 * (float(h2(conv(spec.beta, spec.p_y))) - float(h2(spec.p_y)))
    return {"r_y_max": max(r_y, 0.0), "r_yz_max": max(r_yz, 0.0)}


# --- joint distributions ---------------------------------------------------


@dataclass(frozen=True)
class JointDist:
    """pmf over an ordered tuple of roles drawn from X, U, Y, Z."""

    axes: tuple
    pmf: np.ndarray

    def __post_init__(self):
        axes = tuple(self.axes)
        if len(set(axes)) != len(axes) or any(a not in AXIS_NAMES for a in axes):
            raise ConfigError(f"axes: expected distinct roles from {AXIS_NAMES}, got {axes}")
        p = _as_prob_table(self.pmf, "pmf")
        if p.ndim != len(axes):
            raise ConfigError("pmf: dimension does not match the number of axes")
        if abs(p.sum() - 1) > ROW_TOL:
            raise ConfigError(f"pmf: total mass {p.sum()!r}, expected 1")
        object.__setattr__(self, "axes", axes)
        object.__setattr__(self, "pmf", p)

    def _idx(self, names: Iterable[str]) -> list:
        return [self.axes.index(a) for a in names]

    def marginal(self, names: Sequence[str]) -> np.ndarray:
        """Marginal table with axes in the requested order."""
        keep = self._idx(names)
        drop = tuple(i for i in range(len(self.axes)) if i not in keep)
        m = self.pmf.sum(axis=drop)
        remaining = [i for i in range(len(self.axes)) if i in keep]
        return np.transpose(m, [remaining.index(i) for i in keep])

    def conditional(self, target: Sequence[str], given: Sequence[str]) -> np.ndarray:
        """Table indexed [given..., target...] with the 0/0 = 0 convention."""
        joint = self.marginal(list(given) + list(target))
        den = self.marginal(given) if given else np.array(1.0)
        den = den.reshape(den.shape + (1,) * len(target))
        return np.divide(joint, den, out=np.zeros_like(joint), where=den > 0)

    def entropy(self, names: Sequence[str], given: Sequence[str] = ()) -> float:
        joint = self.marginal(list(given) + list(names))
        h = -float(xlogy(joint, joint).sum())
        if given:
            g = self.marginal(given)
            h += float(xlogy(g, g).sum())
        return h

    def mutual_information(self, a: Sequence[str], b: Sequence[str], given: Sequence[str] = ()) -> float:
        return self.entropy(a, given) - self.entropy(a, list(given) + list(b))

    def expect_log(self, log_table: np.ndarray, names: Sequence[str], forbid_unsupported=False) -> float:
        """E_q[log_table] where log_table is indexed by ``names`` (may hold -inf)."""
        m = self.marginal(names)
        lt = np.broadcast_to(np.asarray(log_table, dtype=float), m.shape)
        bad = (m > 0) & ~np.isfinite(lt)
        if np.any(bad):
            if forbid_unsupported:
                raise UnsupportedMassError("positive mass on a zero-probability cell")
            return -math.inf
        return float(np.sum(np.where(m > 0, m * np.where(np.isfinite(lt), lt, 0.0), 0.0)))


def info_functionals(q: JointDist) -> dict:
    """Entropies and pairwise mutual informations of every role subset present."""
    names = q.axes
    out = {"H": q.entropy(names)}
    for a in names:
        out[f"H({a})"] = q.entropy([a])
        for b in names:
            if b != a:
                out[f"H({a}|{b})"] = q.entropy([a], [b])
                if a < b:
                    out[f"I({a};{b})"] = q.mutual_information([a], [b])
    return out


# --- JSON specs -------------------------------------------------------------


def channel_from_spec(doc: dict) -> tuple:
    """Build (channel, ensemble-or-None) from a JSON-style document."""
    if doc.get("type") == "degraded_bsc":
        try:
            p_y, p_z = float(doc["p_y"]), float(doc["p_z"])
        except KeyError as exc:
            raise ConfigError(f"{exc.args[0]}: missing field") from None
        ch = make_degraded_bsc(p_y, p_z)
        ens = make_binary_ensemble(float(doc["beta"])) if "beta" in doc else None
        return ch, ens
    if "kernel" in doc:
        ch = BroadcastChannel(doc["kernel"])
        if ch.markov_gap() > MARKOV_TOL:
            warnings.warn("kernel does not factor as X->Y->Z; formulas are still evaluated", stacklevel=2)
        ens = None
        if "p_u" in doc and "p_x_given_u" in doc:
            ens = HierarchicalEnsemble(doc["p_u"], doc["p_x_given_u"])
        return ch, ens
    raise ConfigError("channel: expected type 'degraded_bsc' or an explicit 'kernel'")


def lse(a, axis=-1, keepdims=False):
    """log-sum-exp along one axis; all -inf slices give -inf."""
    a = np.asarray(a, dtype=float)
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True)) + m
    return out if keepdims else np.squeeze(out, axis=axis)
