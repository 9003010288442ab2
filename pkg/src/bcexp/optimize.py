"""Deterministic grid search with local halving refinement on the unit cube.

Objectives receive an ``(n, d)`` array of unit-cube coordinates and return ``n``
values. Callers map the cube onto their feasible set, so every grid point is
feasible. Ties go to the lexicographically smallest coordinate vector.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

CHUNK = 1 << 16


@dataclass
class GridResult:
    x: np.ndarray
    value: float
    evaluations: int


def _evaluate(fun, pts: np.ndarray) -> np.ndarray:
    out = np.empty(len(pts))
    for s in range(0, len(pts), CHUNK):
        out[s:s + CHUNK] = fun(pts[s:s + CHUNK])
    # nan means an excluded point
    return np.where(np.isnan(out), -np.inf, out)


def _pick(pts: np.ndarray, vals: np.ndarray, sign: float):
    v = sign * vals
    best = np.max(v)
    tied = np.flatnonzero(v == best)
    if len(tied) > 1:
        sub = pts[tied]
        # lexsort keys run last-to-first
        order = np.lexsort(sub.T[::-1])
        i = tied[order[0]]
    else:
        i = tied[0]
    return pts[i].copy(), float(vals[i])


def lattice(dim: int, step: float) -> np.ndarray:
    k = int(round(1 / step))
    axis = np.linspace(0.0, 1.0, k + 1)
    mesh = np.meshgrid(*([axis] * dim), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def grid_refine(fun, dim: int, step: float = 1 / 64, rounds: int = 3, seeds=None,
                minimize: bool = False, width: int = 2) -> GridResult:
    """Coarse lattice search then ``rounds`` halvings of the step around the incumbent."""
    sign = -1.0 if minimize else 1.0
    pts = lattice(dim, step)
    if seeds is not None and len(seeds):
        pts = np.vstack([pts, np.clip(np.atleast_2d(seeds), 0.0, 1.0)])
    vals = _evaluate(fun, pts)
    x, val = _pick(pts, vals, sign)
    n_eval = len(pts)
    offsets = np.array(list(itertools.product(range(-width, width + 1), repeat=dim)), dtype=float)
    h = step
    for _ in range(rounds):
        h /= 2
        cand = np.unique(np.clip(x + offsets * h, 0.0, 1.0), axis=0)
        cv = _evaluate(fun, cand)
        n_eval += len(cand)
        allp = np.vstack([x[None, :], cand])
        allv = np.concatenate([[val], cv])
        x, val = _pick(allp, allv, sign)
    return GridResult(x, val, n_eval)


def golden_max(fun, lo, hi, iters: int = 60):
    """Vectorized golden-section search for concave ``fun`` on [lo, hi].

    ``lo`` and ``hi`` are arrays; ``fun`` maps an array of abscissae (same
    shape) to values. Returns (argmax, max) including the end points.
    """
    lo = np.array(lo, dtype=float)
    hi = np.array(hi, dtype=float)
    g = (np.sqrt(5) - 1) / 2
    a, b = lo.copy(), hi.copy()
    c = b - g * (b - a)
    d = a + g * (b - a)
    fc, fd = fun(c), fun(d)
    for _ in range(iters):
        left = fc >= fd
        a = np.where(left, a, c)
        b = np.where(left, d, b)
        p = np.where(left, b - g * (b - a), a + g * (b - a))
        fp = fun(p)
        c, d = np.where(left, p, d), np.where(left, c, p)
        fc, fd = np.where(left, fp, fd), np.where(left, fc, fp)
    mid = (a + b) / 2
    cands = np.stack([lo, hi, mid])
    vals = np.stack([fun(lo), fun(hi), fun(mid)])
    vals = np.where(np.isnan(vals), -np.inf, vals)
    k = np.argmax(vals, axis=0)
    return np.take_along_axis(cands, k[None], 0)[0], np.take_along_axis(vals, k[None], 0)[0]
