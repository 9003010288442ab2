"""Rate sweeps with beta optimization, CSV output and plot emission.

Every number written here comes straight from a library call; this module
only chooses beta, orders rows and formats output.
"""
from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .channel import BroadcastChannel, RatePair, channel_from_spec, make_binary_ensemble
from .enumerator import Combine, EnumeratorSettings, strong_exponent_t2, weak_exponent_t2
from .errors import ConfigError, InfeasibleError
from .gallager import (ExponentReport, GridSettings, Mode, gallager74_strong, gallager74_weak,
                       single_user_exponent, strong_exponent_t1, weak_exponent_t1)

ExponentName = Literal["E_gz", "E_z1", "E_z2", "E_gy", "E_y1", "E_y2"]
WEAK = ("E_gz", "E_z1", "E_z2")
STRONG = ("E_gy", "E_y1", "E_y2")
# opposite-user exponent of the same family, used when no constraint exponent is given
PARTNER = {"E_gz": "E_gy", "E_z1": "E_y1", "E_z2": "E_y2",
           "E_gy": "E_gz", "E_y1": "E_z1", "E_y2": "E_z2"}
DEFAULT_FLOOR = 1e-6
# target values this close to the best count as ties (then the smallest beta wins)
TIE_TOL = 1e-9


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class GridSpec(_Strict):
    """Either explicit values or an evenly spaced range."""

    start: float | None = None
    stop: float | None = None
    points: int = Field(64, ge=1)
    values: list[float] | None = None

    @model_validator(mode="after")
    def _check(self):
        if self.values is None and (self.start is None or self.stop is None):
            raise ValueError("give either 'values' or both 'start' and 'stop'")
        vals = self.grid()
        if len(vals) == 0:
            raise ValueError("grid is empty")
        if np.any(np.diff(vals) <= 0):
            raise ValueError("grid must be strictly increasing")
        return self

    def grid(self) -> np.ndarray:
        if self.values is not None:
            return np.asarray(self.values, dtype=float)
        if self.points == 1:
            return np.array([float(self.start)])
        return np.linspace(self.start, self.stop, self.points)


class ChannelConfig(_Strict):
    type: Literal["degraded_bsc", "kernel"] = "degraded_bsc"
    p_y: float = 0.05
    p_z: float = 0.3
    kernel: list | None = None

    def build(self) -> BroadcastChannel:
        if self.type == "kernel":
            if self.kernel is None:
                raise ConfigError("channel.kernel: required when type is 'kernel'")
            ch, _ = channel_from_spec({"kernel": self.kernel})
        else:
            ch, _ = channel_from_spec({"type": "degraded_bsc", "p_y": self.p_y, "p_z": self.p_z})
        if ch.x_size != 2:
            raise ConfigError("channel: the beta family needs a binary input alphabet")
        return ch


class RateConfig(_Strict):
    r_y: float | GridSpec
    r_yz: float | GridSpec

    @model_validator(mode="after")
    def _one_swept(self):
        swept = [isinstance(v, GridSpec) for v in (self.r_y, self.r_yz)]
        if sum(swept) != 1:
            raise ValueError("exactly one of r_y, r_yz must be a grid")
        for name in ("r_y", "r_yz"):
            v = getattr(self, name)
            vals = v.grid() if isinstance(v, GridSpec) else np.array([v])
            if np.any(vals < 0):
                raise ValueError(f"{name}: rates must be nonnegative")
        return self

    @property
    def swept(self) -> str:
        return "r_y" if isinstance(self.r_y, GridSpec) else "r_yz"

    def points(self) -> list:
        def vals(v):
            return v.grid() if isinstance(v, GridSpec) else np.array([v])

        return [RatePair(float(a), float(b)) for a in vals(self.r_y) for b in vals(self.r_yz)]


class ConstraintConfig(_Strict):
    """Opposite-user requirement: value >= threshold, or >= fraction of that user's best exponent.

    The best exponent of a user is its single-user exponent at its own rate
    alone: X->Z at R_yz for the weak user, X->Y at R_y for the strong user.
    """

    exponent: ExponentName | None = None
    threshold: float = Field(0.0, ge=0)
    fraction_of_max: float | None = Field(None, ge=0, le=1)
    floor: float = Field(DEFAULT_FLOOR, gt=0)


class GallagerGridConfig(_Strict):
    step_1d: float = Field(1 / 64, gt=0, le=1)
    step_2d: float = Field(1 / 64, gt=0, le=1)
    step_4d: float = Field(1 / 16, gt=0, le=1)
    rounds: int = Field(3, ge=0)
    rounds_4d: int = Field(5, ge=0)

    def settings(self) -> GridSettings:
        return GridSettings(**self.model_dump())


class EnumeratorConfig(_Strict):
    outer_step: float = Field(1 / 8, gt=0, le=1)
    outer_rounds: int = Field(5, ge=0)
    inner_step: float = Field(1 / 8, gt=0, le=1)
    inner_rounds: int = Field(9, ge=0)
    simplex_step: float = Field(1 / 64, gt=0, le=1)
    simplex_rounds: int = Field(3, ge=0)
    golden_iters: int = Field(40, ge=1)
    rho_max: float = Field(1.0, gt=0)
    combine: Combine = Combine.MIN

    def settings(self) -> EnumeratorSettings:
        d = self.model_dump()
        d.pop("combine")
        return EnumeratorSettings(**d)


class OutputConfig(_Strict):
    csv: str | None = None
    plot: str | None = None


class SweepConfig(_Strict):
    name: str = "sweep"
    channel: ChannelConfig = ChannelConfig()
    rates: RateConfig
    beta: GridSpec = GridSpec(values=[i / 128 for i in range(65)])
    exponents: list[ExponentName]
    target: ExponentName | None = None
    constraint: ConstraintConfig = ConstraintConfig()
    grid: GallagerGridConfig = GallagerGridConfig()
    enumerator: EnumeratorConfig = EnumeratorConfig()
    output: OutputConfig = OutputConfig()

    @field_validator("exponents")
    @classmethod
    def _nonempty(cls, v):
        if not v:
            raise ValueError("select at least one exponent")
        if len(set(v)) != len(v):
            raise ValueError("exponent names must be distinct")
        return v

    @field_validator("beta")
    @classmethod
    def _beta_range(cls, v):
        g = v.grid()
        if g[0] < 0 or g[-1] > 0.5:
            raise ValueError("beta values must lie in [0, 1/2]")
        return v

    @property
    def target_name(self) -> str:
        return self.target or self.exponents[0]

    @property
    def constraint_name(self) -> str:
        return self.constraint.exponent or PARTNER[self.target_name]


# --- evaluation ------------------------------------------------------------


class Evaluator:
    """Named exponents at one (rates, beta) with the configured resolutions."""

    def __init__(self, ch: BroadcastChannel, grid: GridSettings, enum: EnumeratorSettings,
                 combine: Combine = Combine.MIN):
        self.ch = ch
        self.grid = grid
        self.enum = enum
        self.combine = combine

    def best_single_user(self, name: str, rates: RatePair) -> float:
        """Largest exponent the user of ``name`` can see: its own channel at its own rate alone."""
        p_x = make_binary_ensemble(0.5).p_x
        if name in WEAK:
            return single_user_exponent(rates.r_yz, p_x, self.ch.p3, self.grid)
        return single_user_exponent(rates.r_y, p_x, self.ch.p1, self.grid)

    def __call__(self, name: str, rates: RatePair, beta: float, fast: bool = False,
                 seed_params=None) -> ExponentReport:
        ens = make_binary_ensemble(beta)
        p1, p3 = self.ch.p1, self.ch.p3
        if name == "E_gz":
            return gallager74_weak(rates, ens, p3, self.grid)
        if name == "E_z1":
            # the two-parameter restriction is used to rank beta values, the full search at the winner
            mode = Mode.ALPHA_EQ_MU if fast else Mode.FULL
            return weak_exponent_t1(rates, ens, p3, mode, self.grid)
        if name == "E_z2":
            if seed_params is None:
                a = weak_exponent_t1(rates, ens, p3, Mode.ALPHA_EQ_MU, self.grid).argmax
                seed_params = [(a["rho"], a["lambda"])]
            return weak_exponent_t2(rates, ens, p3, self.enum, seed_params=seed_params)
        if name == "E_gy":
            return gallager74_strong(rates, ens, p1, self.grid)
        if name == "E_y1":
            return strong_exponent_t1(rates, ens, p1, self.grid)
        if name == "E_y2":
            return strong_exponent_t2(rates, ens, p1, self.combine, self.enum)
        raise ConfigError(f"exponents: unknown name {name!r}")


def _meets(value: float, threshold: float, floor: float) -> bool:
    return value > floor if threshold == 0 else value >= threshold


def optimize_beta(rates: RatePair, constraint: ConstraintConfig, selection, evaluator: Evaluator,
                  betas, target: str | None = None) -> dict:
    """Best beta for the target exponent subject to the opposite-user constraint.

    Ties (within TIE_TOL) go to the smallest beta.  Raises InfeasibleError when no beta on the
    grid satisfies the constraint.
    """
    selection = list(selection)
    target = target or selection[0]
    other = constraint.exponent or PARTNER[target]
    betas = np.asarray(betas, dtype=float)
    tv = np.array([evaluator(target, rates, b, fast=True).value for b in betas])
    cv = np.array([evaluator(other, rates, b, fast=True).value for b in betas])
    threshold = constraint.threshold
    if constraint.fraction_of_max is not None:
        threshold = max(threshold, constraint.fraction_of_max * evaluator.best_single_user(other, rates))
    ok = np.array([_meets(v, threshold, constraint.floor) for v in cv])
    if not ok.any():
        raise InfeasibleError(f"no beta satisfies {other} >= {threshold:.6g} at R_y={rates.r_y:.6g}, "
                              f"R_yz={rates.r_yz:.6g}")
    idx = np.flatnonzero(ok)
    best = tv[idx].max()
    j = int(idx[np.flatnonzero(tv[idx] >= best - TIE_TOL)[0]])
    beta = float(betas[j])
    reports = {}
    for name in dict.fromkeys(selection + [target, other]):
        seed = None
        if name == "E_z2":
            a = evaluator("E_z1", rates, beta, fast=True).argmax
            seed = [(a["rho"], a["lambda"])]
        reports[name] = evaluator(name, rates, beta, seed_params=seed)
    return {"beta_star": beta, "beta_index": j, "target": target, "constraint_exponent": other,
            "threshold": threshold, "exponents": reports}


# --- sweep -------------------------------------------------------------------


def _argmax_columns(name: str, rep: ExponentReport) -> dict:
    return {f"{name}_{k}": v for k, v in rep.argmax.items()}


def _sweep_point(args) -> dict:
    cfg, rates = args
    ev = Evaluator(cfg.channel.build(), cfg.grid.settings(), cfg.enumerator.settings(),
                   cfg.enumerator.combine)
    row = {"rate_ry": rates.r_y, "rate_ryz": rates.r_yz}
    try:
        res = optimize_beta(rates, cfg.constraint, cfg.exponents, ev, cfg.beta.grid(), cfg.target_name)
    except InfeasibleError:
        row.update({"beta_star": None, "beta_index": None, "status": "infeasible"})
        for name in cfg.exponents:
            row[name] = None
        return row
    row.update({"beta_star": res["beta_star"], "beta_index": res["beta_index"], "status": "ok"})
    for name in cfg.exponents:
        row[name] = res["exponents"][name].value
    for name in cfg.exponents:
        row.update(_argmax_columns(name, res["exponents"][name]))
    return row


def _fmt(v, scale: float = 1.0) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    if isinstance(v, str):
        return v
    return repr(float(v) * scale)


def sweep_rows(cfg: SweepConfig, threads: int = 1) -> list:
    """Evaluate every rate point; rows come back sorted by rate regardless of scheduling."""
    tasks = [(cfg, r) for r in cfg.rates.points()]
    if threads > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(_sweep_point, tasks))
    else:
        rows = [_sweep_point(t) for t in tasks]
    rows.sort(key=lambda r: (r["rate_ry"], r["rate_ryz"]))
    # audit: beta_star moving by more than one grid step between neighbouring feasible rows
    prev = None
    for row in rows:
        jump = 0
        if row["beta_index"] is not None:
            if prev is not None and abs(row["beta_index"] - prev) > 1:
                jump = 1
            prev = row["beta_index"]
        row["beta_jump"] = jump
    return rows


def rows_to_csv(rows: list, cfg: SweepConfig, units: str = "nats") -> str:
    scale = 1 / math.log(2) if units == "bits" else 1.0
    head = ["rate_ry", "rate_ryz", "beta_star", "beta_jump", "status"] + list(cfg.exponents)
    extra = []
    for row in rows:
        for k in row:
            if k not in head and k != "beta_index" and k not in extra:
                extra.append(k)
    head += extra
    rate_like = set(["rate_ry", "rate_ryz"] + list(cfg.exponents))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(head)
    for row in rows:
        w.writerow([_fmt(row.get(k), scale if k in rate_like else 1.0) for k in head])
    return buf.getvalue()


def run_sweep(cfg: SweepConfig, out: str | Path | None = None, threads: int = 1, units: str = "nats") -> Path:
    """Write the sweep CSV (and the plot files when configured); returns the CSV path."""
    path = Path(out or cfg.output.csv or f"{cfg.name}.csv")
    rows = sweep_rows(cfg, threads)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(rows_to_csv(rows, cfg, units))
    if cfg.output.plot:
        emit_plot(path, out=cfg.output.plot)
    return path


# --- plots -------------------------------------------------------------------

EXPONENT_LABELS = {"E_gz": "E_g,z", "E_z1": "E_z,1", "E_z2": "E_z,2",
                   "E_gy": "E_g,y", "E_y1": "E_y,1", "E_y2": "E_y,2"}
COLORS = ["#1f4e9c", "#b22222", "#2e7d32", "#6a1b9a", "#ef6c00", "#00838f"]


def read_sweep_csv(path) -> tuple:
    """(header, columns) of a sweep CSV; malformed input raises ConfigError with the line number."""
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines:
        raise ConfigError(f"{path}:1: empty file")
    reader = csv.reader(lines)
    header = next(reader)
    for col in ("rate_ry", "rate_ryz"):
        if col not in header:
            raise ConfigError(f"{path}:1: header lacks column {col!r}")
    cols = {h: [] for h in header}
    for lineno, rec in enumerate(reader, start=2):
        if len(rec) != len(header):
            raise ConfigError(f"{path}:{lineno}: expected {len(header)} fields, found {len(rec)}")
        for h, v in zip(header, rec):
            if h == "status":
                cols[h].append(v)
                continue
            try:
                cols[h].append(float(v) if v != "" else math.nan)
            except ValueError:
                raise ConfigError(f"{path}:{lineno}: column {h!r} holds non-numeric {v!r}") from None
    return header, cols


def _line_style(name: str, style) -> str:
    if isinstance(style, dict) and name in style:
        return style[name]
    # baseline curves dotted, new exponents solid
    return "dotted" if name in ("E_gz", "E_gy") else "solid"


def emit_plot(csv_path, style=None, out=None) -> Path:
    """Write a gnuplot script and an SVG rendering next to ``out`` (default: the CSV stem)."""
    csv_path = Path(csv_path)
    header, cols = read_sweep_csv(csv_path)
    names = [h for h in header if h in EXPONENT_LABELS]
    if not names:
        raise ConfigError(f"{csv_path}:1: no exponent columns to plot")
    xr_ry, xr_ryz = np.array(cols["rate_ry"]), np.array(cols["rate_ryz"])
    xcol = "rate_ry" if len(np.unique(xr_ry)) > len(np.unique(xr_ryz)) else "rate_ryz"
    stem = Path(out) if out else csv_path.with_suffix("")
    stem = stem.with_suffix("")
    gp, svg = stem.with_suffix(".gp"), stem.with_suffix(".svg")
    stem.parent.mkdir(parents=True, exist_ok=True)
    data_ref = os.path.relpath(csv_path.resolve(), gp.parent.resolve())
    gp.write_text(_gnuplot_script(data_ref, header, names, xcol, style))
    svg.write_text(_svg(np.array(cols[xcol]), {n: np.array(cols[n]) for n in names}, xcol, style))
    return gp


def _gnuplot_script(data_ref: str, header, names, xcol, style) -> str:
    xi = header.index(xcol) + 1
    lines = ["set datafile separator ','", "set key top right",
             f"set xlabel '{'R_y' if xcol == 'rate_ry' else 'R_yz'} [nats]'",
             "set ylabel 'exponent [nats]'", "set yrange [0:*]"]
    plots = []
    for k, n in enumerate(names):
        dt = 3 if _line_style(n, style) == "dotted" else 1
        plots.append(f"'{data_ref}' skip 1 using {xi}:{header.index(n) + 1} with linespoints "
                     f"dt {dt} lc rgb '{COLORS[k % len(COLORS)]}' title '{EXPONENT_LABELS[n]}'")
    lines.append("plot " + ", \\\n     ".join(plots))
    return "\n".join(lines) + "\n"


def _svg(x, curves: dict, xcol: str, style) -> str:
    w, h, pad = 640, 420, 56
    finite = np.concatenate([c[np.isfinite(c)] for c in curves.values()] + [np.zeros(1)])
    ymax = float(finite.max()) or 1.0
    xmin, xmax = float(np.nanmin(x)), float(np.nanmax(x))
    if xmax == xmin:
        xmin, xmax = xmin - 0.5, xmax + 0.5

    def px(v):
        return pad + (v - xmin) / (xmax - xmin) * (w - 2 * pad)

    def py(v):
        return h - pad - v / ymax * (h - 2 * pad)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">',
           f'<rect width="{w}" height="{h}" fill="white"/>',
           f'<line x1="{pad}" y1="{h - pad}" x2="{w - pad}" y2="{h - pad}" stroke="black"/>',
           f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{h - pad}" stroke="black"/>',
           f'<text x="{w / 2}" y="{h - 14}" text-anchor="middle" font-size="13">'
           f'{"R_y" if xcol == "rate_ry" else "R_yz"} [nats]</text>',
           f'<text x="16" y="{h / 2}" font-size="13" transform="rotate(-90 16 {h / 2})" '
           f'text-anchor="middle">exponent [nats]</text>']
    for t in np.linspace(0, 1, 5):
        xv, yv = xmin + t * (xmax - xmin), t * ymax
        out.append(f'<text x="{px(xv):.1f}" y="{h - pad + 16}" font-size="10" text-anchor="middle">{xv:.3g}</text>')
        out.append(f'<text x="{pad - 6}" y="{py(yv) + 3:.1f}" font-size="10" text-anchor="end">{yv:.3g}</text>')
    for k, (name, y) in enumerate(curves.items()):
        color = COLORS[k % len(COLORS)]
        dash = ' stroke-dasharray="2,4"' if _line_style(name, style) == "dotted" else ""
        good = np.isfinite(y) & np.isfinite(x)
        pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x[good], y[good]))
        if good.sum() == 1:
            out.append(f'<circle cx="{px(x[good][0]):.2f}" cy="{py(y[good][0]):.2f}" r="4" fill="{color}"/>')
        elif good.sum() > 1:
            out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.8"{dash}/>')
        ly = pad + 18 * k
        out.append(f'<line x1="{w - pad - 90}" y1="{ly}" x2="{w - pad - 60}" y2="{ly}" stroke="{color}" '
                   f'stroke-width="1.8"{dash}/>')
        out.append(f'<text x="{w - pad - 54}" y="{ly + 4}" font-size="12">{EXPONENT_LABELS[name]}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
