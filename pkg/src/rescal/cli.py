"""Command line entry point: ``rescal run | list-flows | census | probe-r0``.

Exit codes: 0 when every verdict passes, 1 when a verdict fails, 2 for an
invalid configuration, 3 when an estimator cannot produce a result.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import io
import json
import os
import sys

from .errors import (ConfigError, ConstructionError, DegenerateMeasureError, DomainError,
                     InfeasibleCoverError, InsufficientDataError, SamplingError)
from .experiments import EXPERIMENTS, ExperimentConfig, run_experiment
from .flows import BUILTIN_FLOWS, builtin, flow_summary
from .orbits import orbit_census

CSV_HEADER = ("experiment", "flow", "t", "epsilon", "delta", "count", "slope", "verdict")
EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_INFEASIBLE = 0, 1, 2, 3
INFEASIBLE = (InfeasibleCoverError, InsufficientDataError, ConstructionError, SamplingError,
              DegenerateMeasureError)
RUN_KEYS = {"experiment", "flows", "ts", "epss", "deltas", "resolution", "seed", "output",
            "t_max"}


def _floats(text, what):
    try:
        vals = tuple(float(x) for x in str(text).replace(",", " ").split())
    except ValueError:
        raise ConfigError(f"{what}: expected a list of numbers, got {text!r}") from None
    if not vals:
        raise ConfigError(f"{what} is empty")
    return vals


def read_config(path) -> dict:
    """Parse a ``key = value`` file with a ``[run]`` section and optional ``[options]``."""
    parser = configparser.ConfigParser()
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if "run" not in parser:
        raise ConfigError(f"{path}: missing [run] section")
    run = dict(parser["run"])
    unknown = set(run) - RUN_KEYS
    if unknown:
        raise ConfigError(f"{path}: unknown keys in [run]: {', '.join(sorted(unknown))}")
    out = {"options": dict(parser["options"]) if "options" in parser else {}}
    for key, val in run.items():
        if key in ("ts", "epss", "deltas"):
            out[key] = _floats(val, key)
        elif key == "flows":
            out[key] = tuple(val.replace(",", " ").split())
        elif key in ("seed", "resolution"):
            try:
                out[key] = int(val)
            except ValueError:
                raise ConfigError(f"{key} must be an integer, got {val!r}") from None
        elif key == "t_max":
            out[key] = _floats(val, key)[0]
        elif key == "output":
            out["output_path"] = val
        else:
            out[key] = val
    return out


def build_config(args) -> ExperimentConfig:
    fields = {}
    target = args.target
    if os.path.isfile(target):
        fields = read_config(target)
    else:
        fields["experiment"] = target
    if "experiment" not in fields:
        raise ConfigError("config names no experiment")
    if args.flow:
        fields["flows"] = tuple(args.flow)
    if args.eps is not None:
        fields["epss"] = _floats(args.eps, "--eps")
    if args.t_max is not None:
        fields["t_max"] = args.t_max
    if args.seed is not None:
        fields["seed"] = args.seed
    if args.out is not None:
        fields["output_path"] = args.out
    for item in args.option or ():
        if "=" not in item:
            raise ConfigError(f"--option expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        fields.setdefault("options", {})[k.strip()] = v.strip()
    return ExperimentConfig(**fields)


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(round(x, 12))
    return str(x)


def rows_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in rows:
        w.writerow([r.experiment, r.flow, _fmt(r.t), _fmt(r.epsilon), _fmt(r.delta),
                    r.count, _fmt(r.slope), _fmt(r.verdict)])
    return buf.getvalue()


def _rounded(obj):
    if isinstance(obj, float):
        return round(obj, 12)
    if isinstance(obj, dict):
        return {k: _rounded(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_rounded(v) for v in obj]
    return obj


def summary_json(summary) -> str:
    return json.dumps(_rounded(summary), indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_outputs(cfg, rows, summary):
    os.makedirs(cfg.output_path, exist_ok=True)
    with open(os.path.join(cfg.output_path, "results.csv"), "w", encoding="utf-8",
              newline="") as fh:
        fh.write(rows_csv(rows))
    with open(os.path.join(cfg.output_path, "summary.json"), "w", encoding="utf-8") as fh:
        fh.write(summary_json(summary))


def cmd_run(args):
    cfg = build_config(args)
    rows, summary = run_experiment(cfg)
    summary["config"] = {"ts": cfg.ts, "epss": cfg.epss, "deltas": cfg.deltas,
                         "resolution": cfg.resolution, "t_max": cfg.t_max,
                         "options": dict(sorted(cfg.options.items()))}
    write_outputs(cfg, rows, summary)
    for flow, s in summary["flows"].items():
        for name, ok in s["verdicts"].items():
            print(f"{'PASS' if ok else 'FAIL'} {cfg.experiment} {flow} {name}")
    return EXIT_OK if summary["passed"] else EXIT_FAIL


def flows_table() -> str:
    lines = [f"{'flow':<22} {'manifold':<13} {'singular set':<40} params"]
    for name in BUILTIN_FLOWS:
        f = builtin(name)
        d = f.describe()
        lines.append(f"{name:<22} {d['manifold']:<13} {d['singular_set']:<40} "
                     f"{json.dumps(d['params'], sort_keys=True)}")
    return "\n".join(lines)


def cmd_list_flows(args):
    print(flows_table())
    return EXIT_OK


def cmd_census(args):
    try:
        A = [[int(x) for x in args.matrix[:2]], [int(x) for x in args.matrix[2:]]]
    except ValueError:
        raise ConfigError("--matrix needs four integers") from None
    census = orbit_census(A, args.t_max)
    print("n,fixed_points,orbits,v")
    for (n, fix, orb), (_, v) in zip(census.per_period, census.v_table):
        print(f"{n},{fix},{orb},{v}")
    return EXIT_OK


def cmd_probe_r0(args):
    from .lemmas import probe_r0

    r = probe_r0(builtin(args.flow), args.trials, args.seed)
    print(f"{args.flow} r0={float(r):g}{' (flagged)' if r.flagged else ''} "
          f"samples={r.report.samples} margin={r.report.worst_margin:.4g}")
    return EXIT_OK


def make_parser():
    p = argparse.ArgumentParser(prog="rescal", description="Rescaled entropy experiments")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a named experiment or a config file")
    r.add_argument("target", help=f"config file or one of: {', '.join(EXPERIMENTS)}")
    r.add_argument("--flow", action="append", help="restrict to a flow (repeatable)")
    r.add_argument("--t-max", type=float, dest="t_max")
    r.add_argument("--eps", help="comma-separated eps ladder")
    r.add_argument("--seed", type=int)
    r.add_argument("--out", help="output directory")
    r.add_argument("--option", action="append", help="extra key=value option")
    r.set_defaults(func=cmd_run)
    sub.add_parser("list-flows", help="built-in flows").set_defaults(func=cmd_list_flows)
    c = sub.add_parser("census", help="periodic-orbit census of a toral automorphism")
    c.add_argument("--matrix", nargs=4, default=["2", "1", "1", "1"])
    c.add_argument("--t-max", type=float, dest="t_max", default=14.0)
    c.set_defaults(func=cmd_census)
    q = sub.add_parser("probe-r0", help="speed-ratio radius of a flow")
    q.add_argument("flow", choices=list(BUILTIN_FLOWS))
    q.add_argument("--trials", type=int, default=10_000)
    q.add_argument("--seed", type=int, default=0)
    q.set_defaults(func=cmd_probe_r0)
    return p


def main(argv=None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except INFEASIBLE as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except DomainError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
