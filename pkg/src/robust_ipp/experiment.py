"""Sweep harness: named baseline modes, per-run CSV/JSON output, aggregation.

A run directory holds ``results.csv`` (one row per epoch, floats written with
``repr`` so they round-trip exactly) and ``manifest.json`` (config echo,
library versions, wall time). Aggregation aligns runs on a common
sample-count grid by carrying each run's latest RMSE forward.
"""

import csv
import json
import platform
import time
import traceback
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from robust_ipp import __version__
from robust_ipp.pipeline import PipelineConfig, run_experiment
from robust_ipp.mcts import tree_to_dict
from robust_ipp.world import save_path_csv

# name -> (planner_mode, detector_mode)
MODES = {
    "uct-none": ("uct", "none"),
    "uct-best": ("uct", "oracle_labels"),
    "uct-copod": ("uct", "copod_batch"),
    "puct-copod": ("puct", "copod_batch"),
    "uct-copod-all": ("uct", "copod_all_history"),
    "puct-copod-all": ("puct", "copod_all_history"),
}
BASELINES = ("uct-none", "uct-best", "uct-copod", "puct-copod")

RESULT_COLUMNS = (
    "mode", "rho", "seed", "epoch", "samples", "rmse", "batch_size", "n_filtered",
    "n_false_alarms", "n_missed", "n_retained", "cum_false_alarms", "cum_missed", "retries",
)
AGGREGATE_COLUMNS = ("mode", "rho", "samples", "n_runs", "rmse_mean", "rmse_std")


def mode_config(base, mode, rho, seed):
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; choose from {sorted(MODES)}")
    planner, detector = MODES[mode]
    return replace(base, planner_mode=planner, detector_mode=detector, rho=float(rho), seed=int(seed))


def mode_name(config):
    for name, pair in MODES.items():
        if pair == (config.planner_mode, config.detector_mode):
            return name
    return f"{config.planner_mode}-{config.detector_mode}"


def run_dirname(mode, rho, seed):
    return f"{mode}_rho{float(rho)!r}_seed{int(seed)}"


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def record_rows(records, mode, rho, seed):
    rows = []
    for r in records:
        rows.append([
            mode, float(rho), int(seed), r.epoch, r.samples, r.rmse, r.batch_size, r.n_filtered,
            r.n_false_alarms, r.n_missed, r.n_retained, r.cum_false_alarms, r.cum_missed, r.retries,
        ])
    return rows


def write_results_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_COLUMNS)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def read_results_csv(path):
    """Per-run rows as dicts with numeric columns parsed."""
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            parsed = {"mode": row["mode"]}
            for key in RESULT_COLUMNS[1:]:
                parsed[key] = float(row[key]) if key in ("rho", "rmse") else int(row[key])
            out.append(parsed)
    return out


def versions():
    import scipy
    import sklearn

    return {
        "robust_ipp": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "scikit-learn": sklearn.__version__,
    }


@dataclass
class RunResult:
    mode: str
    rho: float
    seed: int
    records: list = field(default_factory=list)
    elapsed: float = 0.0
    error: str = None

    @property
    def ok(self):
        return self.error is None

    @property
    def final_rmse(self):
        return self.records[-1].rmse

    def rows(self):
        return record_rows(self.records, self.mode, self.rho, self.seed)


def run_single(config, out_dir=None, debug_tree=False, mode=None):
    """One experiment; writes ``results.csv`` and ``manifest.json`` if ``out_dir`` is given.

    Exceptions propagate; use :func:`sweep` for failure-tolerant batches.
    """
    mode = mode or mode_name(config)
    trees = [] if debug_tree else None
    start = time.perf_counter()
    records = run_experiment(config, debug_tree=trees)
    result = RunResult(mode, config.rho, config.seed, records, time.perf_counter() - start)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_results_csv(out / "results.csv", result.rows())
        poses = [(r.epoch, *pose) for r in records for pose in r.trajectory]
        save_path_csv(np.array(poses).reshape(-1, 4), out / "trajectory.csv")
        manifest = {
            "mode": mode,
            "config": config.to_dict(),
            "versions": versions(),
            "elapsed_seconds": result.elapsed,
            "epochs": len(records) - 1,
        }
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2, default=list) + "\n")
        if trees is not None:
            # one tree per search call, heading-reset retries included
            payload = [tree_to_dict(t) for t in trees]
            (out / "trees.json").write_text(json.dumps(payload))
    return result


def _run_task(base, mode, rho, seed, out_dir):
    cfg = mode_config(base, mode, rho, seed)
    target = None if out_dir is None else Path(out_dir) / run_dirname(mode, rho, seed)
    try:
        return run_single(cfg, target, mode=mode)
    except Exception as exc:  # a failed run must not stop the sweep
        err = f"{type(exc).__name__}: {exc}"
        if getattr(exc, "epoch", None) is not None:
            err += f" (epoch {exc.epoch})"
        return RunResult(mode, float(rho), int(seed), error=err + "\n" + traceback.format_exc(limit=3))


def sample_grid(config, step=20):
    grid = list(range(config.pilot_samples, config.budget_samples, step))
    return grid + [config.budget_samples]


def curve_on_grid(samples, rmses, grid):
    """RMSE of the latest epoch with at most ``g`` samples, for each ``g``."""
    samples = np.asarray(samples)
    idx = np.searchsorted(samples, grid, side="right") - 1
    if np.any(idx < 0):
        raise ValueError("grid starts before the first record")
    return np.asarray(rmses, dtype=float)[idx]


def _std(values):
    return float(np.std(values, ddof=1)) if len(values) > 1 else 0.0


def aggregate(runs, grid):
    """Per-(mode, rho, samples) mean and sample std of RMSE over seeds."""
    groups = {}
    for run in sorted(runs, key=lambda r: r.seed):
        if not run.ok:
            continue
        s = [r.samples for r in run.records]
        e = [r.rmse for r in run.records]
        groups.setdefault((run.mode, run.rho), []).append(curve_on_grid(s, e, grid))
    rows = []
    for (mode, rho), curves in sorted(groups.items()):
        curves = np.vstack(curves)
        for k, g in enumerate(grid):
            col = curves[:, k]
            rows.append([mode, rho, g, len(col), float(np.mean(col)), _std(col)])
    return rows


def aggregate_from_dirs(root, grid):
    """Recompute the aggregate from per-run CSVs under ``root``."""
    runs = []
    for path in sorted(Path(root).glob("*/results.csv")):
        rows = read_results_csv(path)
        if not rows:
            continue
        run = RunResult(rows[0]["mode"], rows[0]["rho"], rows[0]["seed"])
        run.records = [_Row(r["samples"], r["rmse"]) for r in rows]
        runs.append(run)
    return aggregate(runs, grid)


@dataclass
class _Row:
    samples: int
    rmse: float


@dataclass
class SweepResult:
    runs: list
    grid: list
    aggregate: list

    @property
    def failures(self):
        return [r for r in self.runs if not r.ok]

    def final(self, mode, rho):
        """Final RMSE per seed for one (mode, rho), ordered by seed."""
        runs = sorted((r for r in self.runs if r.ok and r.mode == mode and r.rho == float(rho)), key=lambda r: r.seed)
        return np.array([r.final_rmse for r in runs])


def write_aggregate_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(AGGREGATE_COLUMNS)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def sweep(base, modes, rhos, seeds, out_dir=None, jobs=1, grid_step=20):
    """Cross product of modes x rhos x seeds; failed runs are kept with their error."""
    if not modes or not rhos or not seeds:
        raise ValueError("modes, rhos and seeds must be non-empty")
    for m in modes:
        if m not in MODES:
            raise ValueError(f"unknown mode {m!r}; choose from {sorted(MODES)}")
    tasks = [(m, float(r), int(s)) for m in modes for r in rhos for s in seeds]
    if jobs == 1:
        runs = [_run_task(base, m, r, s, out_dir) for m, r, s in tasks]
    else:
        from joblib import Parallel, delayed

        runs = Parallel(n_jobs=jobs)(delayed(_run_task)(base, m, r, s, out_dir) for m, r, s in tasks)
    grid = sample_grid(base, grid_step)
    agg = aggregate(runs, grid)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_aggregate_csv(out / "aggregate.csv", agg)
        failed = [{"mode": r.mode, "rho": r.rho, "seed": r.seed, "error": r.error} for r in runs if not r.ok]
        (out / "failures.json").write_text(json.dumps(failed, indent=2) + "\n")
    return SweepResult(runs, grid, agg)


def desk_config(**overrides):
    """Small-map settings used by the acceptance checks (50 x 50, 600 samples)."""
    base = PipelineConfig(budget_samples=600, pilot_samples=60, epoch_opt_iters=15)
    return replace(base, **overrides)
