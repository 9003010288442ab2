"""Command-line driver: ``bcexp <command> --config file.json``.

Exit codes: 0 success, 1 failed validation, 2 configuration error, 3 infeasible constraint.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np
from pydantic import Field, ValidationError

from . import oracles
from .channel import DegradedBscSpec, JointDist, RatePair, bsc_capacity_corner, make_binary_ensemble
from .errors import ConfigError, InfeasibleError
from .sweep import (ChannelConfig, ConstraintConfig, EnumeratorConfig, Evaluator, ExponentName,
                    GallagerGridConfig, GridSpec, SweepConfig, _Strict, emit_plot, optimize_beta, run_sweep)

EXIT_OK, EXIT_FAILED, EXIT_CONFIG, EXIT_INFEASIBLE = 0, 1, 2, 3


class Rates(_Strict):
    r_y: float = Field(ge=0)
    r_yz: float = Field(ge=0)

    def pair(self) -> RatePair:
        return RatePair(self.r_y, self.r_yz)


class CapacityConfig(_Strict):
    channel: ChannelConfig = ChannelConfig()
    beta: float = Field(ge=0, le=0.5)


class ExponentConfig(_Strict):
    channel: ChannelConfig = ChannelConfig()
    beta: float = Field(ge=0, le=0.5)
    rates: Rates
    exponents: list[ExponentName] = Field(min_length=1)
    grid: GallagerGridConfig = GallagerGridConfig()
    enumerator: EnumeratorConfig = EnumeratorConfig()


class OptimizeConfig(_Strict):
    channel: ChannelConfig = ChannelConfig()
    rates: Rates
    beta: GridSpec = GridSpec(values=[i / 128 for i in range(65)])
    exponents: list[ExponentName] = Field(min_length=1)
    target: ExponentName | None = None
    constraint: ConstraintConfig = ConstraintConfig()
    grid: GallagerGridConfig = GallagerGridConfig()
    enumerator: EnumeratorConfig = EnumeratorConfig()


class ValidateConfig(_Strict):
    n: int = Field(12, ge=1, le=oracles.MAX_N)
    count: int = Field(10, ge=2)
    tolerance: float = Field(oracles.DEFAULT_GAP_TOL, gt=0)
    beta: float = Field(0.1, ge=0, le=0.5)
    root_instances: int = Field(100, ge=0)


class SimulateConfig(_Strict):
    channel: ChannelConfig = ChannelConfig()
    beta: float = Field(ge=0, le=0.5)
    rates: Rates
    n: int = Field(ge=1)
    trials: int = Field(ge=1)


def _scale(units: str) -> float:
    return 1 / math.log(2) if units == "bits" else 1.0


def _report_dict(rep, scale: float) -> dict:
    diag = {k: (v * scale if isinstance(v, float) else v) for k, v in rep.diagnostics.items()}
    return {"value": rep.value * scale, "argmax": rep.argmax, "branch": rep.branch, "diagnostics": diag}


def _emit(doc, out):
    text = json.dumps(doc, indent=2, sort_keys=True, default=_json_default) + "\n"
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _load(path, model):
    if path is None:
        raise ConfigError("--config: a JSON configuration file is required")
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"--config: no such file {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from None
    return model.model_validate(doc)


def _evaluator(cfg) -> Evaluator:
    return Evaluator(cfg.channel.build(), cfg.grid.settings(), cfg.enumerator.settings(), cfg.enumerator.combine)


def cmd_capacity(args) -> int:
    cfg = _load(args.config, CapacityConfig)
    ch = cfg.channel.build()
    ens = make_binary_ensemble(cfg.beta)
    s = _scale(args.units)
    joint = np.einsum("u,ux,xyz->uxyz", ens.p_u, ens.p_x_given_u, ch.kernel)
    q = JointDist(("U", "X", "Y", "Z"), joint)
    doc = {"beta": cfg.beta, "units": args.units,
           "I(X;Y|U)": q.mutual_information(["X"], ["Y"], ["U"]) * s,
           "I(U;Z)": q.mutual_information(["U"], ["Z"]) * s,
           "I(X;Y)": q.mutual_information(["X"], ["Y"]) * s,
           "I(X;Z)": q.mutual_information(["X"], ["Z"]) * s}
    if cfg.channel.type == "degraded_bsc":
        corner = bsc_capacity_corner(DegradedBscSpec(cfg.channel.p_y, cfg.channel.p_z, cfg.beta))
        doc.update({k: v * s for k, v in corner.items()})
    _emit(doc, args.out)
    return EXIT_OK


def cmd_exponent(args) -> int:
    cfg = _load(args.config, ExponentConfig)
    ev = _evaluator(cfg)
    s = _scale(args.units)
    rates = cfg.rates.pair()
    doc = {"beta": cfg.beta, "units": args.units, "r_y": rates.r_y * s, "r_yz": rates.r_yz * s,
           "exponents": {name: _report_dict(ev(name, rates, cfg.beta), s) for name in cfg.exponents}}
    _emit(doc, args.out)
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load(args.config, SweepConfig)
    path = run_sweep(cfg, out=args.out, threads=args.threads, units=args.units)
    if cfg.output.plot is None and args.plot:
        emit_plot(path)
    print(str(path))
    text = path.read_text().splitlines()
    status = text[0].split(",").index("status")
    if len(text) > 1 and all(line.split(",")[status] == "infeasible" for line in text[1:]):
        return EXIT_INFEASIBLE
    return EXIT_OK


def cmd_optimize(args) -> int:
    cfg = _load(args.config, OptimizeConfig)
    ev = _evaluator(cfg)
    s = _scale(args.units)
    res = optimize_beta(cfg.rates.pair(), cfg.constraint, cfg.exponents, ev, cfg.beta.grid(), cfg.target)
    res["threshold"] *= s
    res["exponents"] = {k: _report_dict(v, s) for k, v in res["exponents"].items()}
    res["units"] = args.units
    _emit(res, args.out)
    return EXIT_OK


def cmd_validate(args) -> int:
    cfg = _load(args.config, ValidateConfig) if args.config else ValidateConfig()
    seed = args.seed if args.seed is not None else 0
    doc = oracles.validation_suite(cfg.n, seed, cfg.count, cfg.tolerance, cfg.beta)
    doc["root_finder"] = oracles.root_contract_suite(cfg.root_instances, seed, cfg.beta)
    doc["passed"] = bool(doc["passed"] and doc["root_finder"]["passed"])
    _emit(doc, args.out)
    return EXIT_OK if doc["passed"] else EXIT_FAILED


def cmd_simulate(args) -> int:
    cfg = _load(args.config, SimulateConfig)
    seed = args.seed if args.seed is not None else 0
    res = oracles.simulate_small_code(cfg.n, cfg.rates.pair(), make_binary_ensemble(cfg.beta),
                                      cfg.channel.build(), cfg.trials, seed)
    _emit(res, args.out)
    return EXIT_OK


COMMANDS = {"capacity": cmd_capacity, "exponent": cmd_exponent, "sweep": cmd_sweep,
            "optimize-beta": cmd_optimize, "validate": cmd_validate, "simulate": cmd_simulate}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON configuration file")
    common.add_argument("--out", help="output path (CSV for sweep, JSON otherwise; default stdout)")
    common.add_argument("--units", choices=("nats", "bits"), default="nats")
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--seed", type=int, default=None)
    p = argparse.ArgumentParser(prog="bcexp", description="Error exponents for the degraded broadcast channel")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name, parents=[common])
        if name == "sweep":
            sp.add_argument("--plot", action="store_true", help="also write .gp and .svg next to the CSV")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    if args.seed is not None and not 0 <= args.seed < 2 ** 64:
        print("error: --seed must fit in an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ValidationError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE


if __name__ == "__main__":
    sys.exit(main())
