"""Command-line entry points: ``run``, ``sweep``, ``copod-score`` and ``terrain``.

Exit codes: 0 success, 1 some sweep runs failed, 2 invalid configuration or
input, 3 numerical or planning failure during a run.
"""

import argparse
import csv
import re
import sys
from pathlib import Path

import numpy as np
import yaml

from robust_ipp.copod import fit_copod, score_samples
from robust_ipp.exceptions import ConfigError, GridParseError, NumericalFailure, PlanningFailure
from robust_ipp.experiment import BASELINES, MODES, mode_config, run_single, sweep
from robust_ipp.pipeline import PipelineConfig
from robust_ipp.world import pilot_poses, save_grid, save_path_csv, synth_terrain

EXIT_OK, EXIT_RUN_FAILED, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2, 3


def _fail(code, message):
    print(f"error: {message}", file=sys.stderr)
    return code


def apply_override(data, assignment):
    """Apply ``a.b=value`` to a nested dict; the value is parsed as YAML."""
    key, sep, raw = assignment.partition("=")
    if not sep or not key:
        raise ConfigError(assignment, "override must look like key=value")
    parts = key.strip().split(".")
    node = data
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(key, "cannot set a field inside a scalar")
    node[parts[-1]] = yaml.safe_load(raw)
    return data


def load_config(path=None, overrides=()):
    data = {}
    if path is not None:
        try:
            loaded = yaml.safe_load(Path(path).read_text())
        except OSError as exc:
            raise ConfigError("config", f"cannot read {path}: {exc}") from None
        except yaml.YAMLError as exc:
            raise ConfigError("config", f"cannot parse {path}: {exc}") from None
        if loaded is not None and not isinstance(loaded, dict):
            raise ConfigError("config", "top level must be a mapping")
        data = loaded or {}
    for assignment in overrides:
        apply_override(data, assignment)
    return PipelineConfig.from_dict(data)


def parse_list(text, cast):
    """``"a,b,c"`` or an inclusive integer range ``"0-9"``."""
    items = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        span = re.fullmatch(r"(\d+)-(\d+)", part) if cast is int else None
        if span:
            items.extend(range(int(span[1]), int(span[2]) + 1))
        else:
            items.append(cast(part))
    if not items:
        raise ValueError(f"empty list {text!r}")
    return items


def cmd_run(args):
    try:
        config = load_config(args.config, args.set or [])
        if args.mode:
            config = mode_config(config, args.mode, config.rho, config.seed)
    except (ConfigError, ValueError) as exc:
        return _fail(EXIT_CONFIG, str(exc))
    out = Path(args.out)
    try:
        result = run_single(config, out, debug_tree=args.debug_tree, mode=args.mode)
    except (NumericalFailure, PlanningFailure) as exc:
        return _fail(EXIT_NUMERICAL, f"run failed at epoch {exc.epoch}: {exc}")
    except GridParseError as exc:
        return _fail(EXIT_CONFIG, f"terrain.path: {exc}")
    print(f"final rmse {result.final_rmse!r} after {result.records[-1].samples} samples -> {out}")
    return EXIT_OK


def cmd_sweep(args):
    try:
        config = load_config(args.config, args.set or [])
        modes = parse_list(args.modes, str)
        rhos = parse_list(args.rhos, float)
        seeds = parse_list(args.seeds, int)
        unknown = [m for m in modes if m not in MODES]
        if unknown:
            raise ConfigError("modes", f"unknown mode {unknown[0]!r}; choose from {sorted(MODES)}")
    except (ConfigError, ValueError) as exc:
        return _fail(EXIT_CONFIG, str(exc))
    result = sweep(config, modes, rhos, seeds, out_dir=args.out, jobs=args.jobs, grid_step=args.grid_step)
    for run in result.failures:
        print(f"failed: {run.mode} rho={run.rho} seed={run.seed}: {run.error.splitlines()[0]}", file=sys.stderr)
    print(f"{len(result.runs) - len(result.failures)}/{len(result.runs)} runs succeeded -> {args.out}")
    return EXIT_RUN_FAILED if result.failures else EXIT_OK


def read_numeric_csv(path):
    """Header row plus numeric body; errors name the row and column."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        rows = []
        for r, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ValueError(f"{path}: row {r}: expected {len(header)} columns, got {len(row)}")
            values = []
            for c, cell in enumerate(row, start=1):
                try:
                    values.append(float(cell))
                except ValueError:
                    raise ValueError(f"{path}: row {r}, column {c} ({header[c - 1]}): not a number: {cell!r}") from None
            rows.append(values)
    return header, np.array(rows, dtype=float).reshape(len(rows), len(header))


def cmd_copod_score(args):
    try:
        header, X = read_numeric_csv(args.input)
        model = fit_copod(X, args.contamination)
    except (OSError, ValueError) as exc:
        return _fail(EXIT_CONFIG, str(exc))
    scores = score_samples(model, X)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header + ["score", "outlier"])
        for row, s in zip(X, scores):
            w.writerow([repr(float(v)) for v in row] + [repr(float(s)), int(s > model.threshold)])
    print(f"{int(np.sum(scores > model.threshold))} of {len(X)} rows flagged -> {args.out}")
    return EXIT_OK


def cmd_terrain(args):
    fmt = args.format or ("csv" if str(args.out).endswith(".csv") else "esri")
    grid = synth_terrain(args.seed, args.rows, args.cols, args.peaks)
    try:
        save_grid(grid, args.out, fmt)
    except OSError as exc:
        return _fail(EXIT_CONFIG, str(exc))
    if args.pilot_out:
        save_path_csv(pilot_poses(grid.extent, args.pilot_samples), args.pilot_out)
    print(f"wrote {args.rows}x{args.cols} terrain ({fmt}) -> {args.out}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="robust-ipp", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def config_flags(p):
        p.add_argument("--config", help="YAML file with PipelineConfig fields")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override, dotted for nested fields")
        p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("run", help="one experiment")
    config_flags(p)
    p.add_argument("--mode", choices=sorted(MODES), help="named planner/detector combination")
    p.add_argument("--debug-tree", action="store_true", help="also dump every search tree to trees.json")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="modes x rhos x seeds")
    config_flags(p)
    p.add_argument("--modes", default=",".join(BASELINES))
    p.add_argument("--rhos", default="0.1")
    p.add_argument("--seeds", default="0-9", help="comma list or inclusive range such as 0-9")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--grid-step", type=int, default=20, help="sample-count spacing of the aggregate")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("copod-score", help="score the rows of a numeric CSV")
    p.add_argument("input")
    p.add_argument("--contamination", type=float, default=0.1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_copod_score)

    p = sub.add_parser("terrain", help="export a synthetic terrain")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rows", type=int, default=50)
    p.add_argument("--cols", type=int, default=50)
    p.add_argument("--peaks", type=int, default=6)
    p.add_argument("--format", choices=("esri", "csv"))
    p.add_argument("--pilot-out", help="also write the pilot loop as x1,x2,heading CSV")
    p.add_argument("--pilot-samples", type=int, default=60)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_terrain)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
