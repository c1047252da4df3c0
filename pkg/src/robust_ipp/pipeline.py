"""The sampling loop: pilot survey, then plan / sense / filter / refit epochs.

Four baselines come from two switches: ``planner_mode`` (``uct`` plans on
predictive std alone, ``puct`` adds the smoothed outlier-occurrence map as a
second objective) and ``detector_mode`` (``none``, ``oracle_labels``,
``copod_batch``, ``copod_all_history``).
"""

import math
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from robust_ipp import gp as gpr
from robust_ipp.copod import detect, fit_copod
from robust_ipp.exceptions import ConfigError, NumericalFailure, PlanningFailure
from robust_ipp.mcts import RewardLookup, SearchConfig, search
from robust_ipp.world import (
    MotionConfig,
    RobotState,
    Workspace,
    bezier_pilot_path,
    dubins_step,
    gaussian_smooth,
    inject_values,
    load_grid,
    outlier_occurrence_grid,
    sense,
    synth_terrain,
)

PLANNER_MODES = ("uct", "puct")
DETECTOR_MODES = ("none", "copod_batch", "copod_all_history", "oracle_labels")
# fixed sub-stream ids: adding a stream must not shift the others
STREAMS = {"sensing": 0, "injection": 1, "search": 2, "expansion": 3, "rollout": 4}


@dataclass(frozen=True)
class TerrainConfig:
    seed: int = 0
    n_rows: int = 50
    n_cols: int = 50
    peak_count: int = 6
    path: str = None


@dataclass(frozen=True)
class PipelineConfig:
    planner_mode: str = "puct"
    detector_mode: str = "copod_batch"
    rho: float = 0.1
    budget_samples: int = 2000
    pilot_samples: int = 100
    init_opt_iters: int = 500
    epoch_opt_iters: int = 50
    learning_rate: float = 0.01
    search: SearchConfig = field(default_factory=SearchConfig)
    motion: MotionConfig = field(default_factory=MotionConfig)
    contamination: float = 0.1
    smoothing_sigma: float = 3.0
    noise_std: float = 1.0
    terrain: TerrainConfig = field(default_factory=TerrainConfig)
    seed: int = 0

    def __post_init__(self):
        if self.planner_mode not in PLANNER_MODES:
            raise ConfigError("planner_mode", f"must be one of {PLANNER_MODES}")
        if self.detector_mode not in DETECTOR_MODES:
            raise ConfigError("detector_mode", f"must be one of {DETECTOR_MODES}")
        if self.planner_mode == "puct" and self.detector_mode in ("none", "oracle_labels"):
            raise ConfigError("planner_mode", "puct needs a COPOD detector mode for its outlier objective")
        if not 0.0 <= self.rho <= 1.0:
            raise ConfigError("rho", "must lie in [0, 1]")
        if self.pilot_samples < 2:
            raise ConfigError("pilot_samples", "must be >= 2")
        if self.budget_samples < self.pilot_samples:
            raise ConfigError("budget_samples", "must be >= pilot_samples")
        for name in ("init_opt_iters", "epoch_opt_iters"):
            if getattr(self, name) < 0:
                raise ConfigError(name, "must be >= 0")
        if not 0.0 < self.contamination < 0.5:
            raise ConfigError("contamination", "must lie in (0, 0.5)")
        if self.smoothing_sigma <= 0:
            raise ConfigError("smoothing_sigma", "must be positive")
        if self.noise_std < 0:
            raise ConfigError("noise_std", "must be >= 0")
        want = 2 if self.planner_mode == "puct" else 1
        if self.search.objective_count != want:
            object.__setattr__(self, "search", replace(self.search, objective_count=want))

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(unknown[0], "unknown configuration key")
        nested = {"search": SearchConfig, "motion": MotionConfig, "terrain": TerrainConfig}
        for key, sub in nested.items():
            if key in data and isinstance(data[key], dict):
                sub_known = {f.name for f in fields(sub)}
                bad = sorted(set(data[key]) - sub_known)
                if bad:
                    raise ConfigError(f"{key}.{bad[0]}", "unknown configuration key")
                try:
                    data[key] = sub(**data[key])
                except (TypeError, ValueError) as exc:
                    raise ConfigError(key, str(exc)) from None
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError("config", str(exc)) from None


class Preprocessor(TransformerMixin, BaseEstimator):
    """Maps the workspace extent onto [-1, 1]^2 and standardizes targets."""

    def fit(self, extent, y):
        x1_min, x1_max, x2_min, x2_max = extent
        self.input_center_ = np.array([(x1_min + x1_max) / 2, (x2_min + x2_max) / 2])
        self.input_halfwidth_ = np.array([(x1_max - x1_min) / 2, (x2_max - x2_min) / 2])
        y = np.asarray(y, dtype=float)
        self.target_mean_ = float(np.mean(y))
        self.target_std_ = float(np.std(y))
        if not self.target_std_ > 0:
            raise ValueError("pilot observations have zero variance")
        return self

    def transform(self, X):
        check_is_fitted(self, "input_center_")
        return (np.asarray(X, dtype=float) - self.input_center_) / self.input_halfwidth_

    def inverse_transform(self, X):
        check_is_fitted(self, "input_center_")
        return np.asarray(X, dtype=float) * self.input_halfwidth_ + self.input_center_

    def transform_targets(self, y):
        return (np.asarray(y, dtype=float) - self.target_mean_) / self.target_std_

    def inverse_transform_targets(self, z):
        return np.asarray(z, dtype=float) * self.target_std_ + self.target_mean_


@dataclass
class RewardMaps:
    std_map: np.ndarray
    outlier_map: np.ndarray
    objective_count: int = 2

    @property
    def layers(self):
        if self.objective_count == 1:
            return self.std_map[None]
        return np.stack([self.std_map, self.outlier_map])


@dataclass
class EpochRecord:
    epoch: int
    samples: int
    rmse: float
    batch_size: int
    n_filtered: int
    n_false_alarms: int
    n_missed: int
    n_retained: int
    cum_false_alarms: int
    cum_missed: int
    retries: int = 0
    trajectory: list = field(default_factory=list)

    @property
    def false_alarm_rate(self):
        """Falsely removed inliers per retained sample."""
        return self.cum_false_alarms / self.n_retained if self.n_retained else float("nan")


def rmse(pred, truth):
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if pred.shape != truth.shape:
        raise ValueError("shape mismatch")
    return float(np.sqrt(np.mean((pred - truth) ** 2)))


def _normalize(a):
    lo, hi = float(np.min(a)), float(np.max(a))
    if hi - lo <= 0:
        return np.zeros_like(a, dtype=float)
    return (a - lo) / (hi - lo)


def build_reward_maps(gp, occurrence, config, geometry=None, query_inputs=None, std=None):
    """Normalized std and smoothed outlier-occurrence maps on the query grid.

    Pass ``std`` (flattened, row-major) to reuse an existing prediction.
    """
    shape = np.shape(occurrence)
    if std is None:
        _, std = gpr.predict(gp, query_inputs)
    std_map = _normalize(np.asarray(std).reshape(shape))
    outlier_map = _normalize(gaussian_smooth(occurrence, config.smoothing_sigma))
    return RewardMaps(std_map, outlier_map, 2 if config.planner_mode == "puct" else 1)


def build_world(config):
    t = config.terrain
    if t.path:
        return load_grid(t.path)
    return synth_terrain(t.seed, t.n_rows, t.n_cols, t.peak_count)


def _streams(seed):
    return {
        name: np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(sid,)))
        for name, sid in STREAMS.items()
    }


class RunState:
    """Mutable history of one run. Arrays grow by one batch per epoch."""

    def __init__(self, config, world):
        self.config = config
        self.world = world
        self.geometry = world.geometry
        self.workspace = Workspace(world.geometry)
        self.queries_raw = world.geometry.cell_centers()
        self.truth = world.values.ravel()
        self.rng = _streams(config.seed)
        self.locations = np.empty((0, 2))
        self.values = np.empty(0)
        self.injected = np.empty(0, dtype=bool)
        self.flagged = np.empty(0, dtype=bool)
        self.occurrence = np.zeros(world.geometry.shape)
        self.epoch = 0
        self.pose = None
        self.prep = None
        self.hp = None
        self.gp = None
        self.pred_mean = None
        self.pred_std = None
        self.records = []

    @property
    def sensed(self):
        return len(self.values)

    @property
    def remaining(self):
        return self.config.budget_samples - self.sensed

    def training_data(self):
        keep = ~self.flagged
        return gpr.Dataset(
            self.prep.transform(self.locations[keep]),
            self.prep.transform_targets(self.values[keep]),
            self.injected[keep],
        )

    def features(self, idx=slice(None)):
        return np.column_stack([self.locations[idx], self.values[idx]])


def _sense_batch(state, locations):
    rng = state.rng["sensing"]
    values = np.array([sense(state.world, loc, state.config.noise_std, rng) for loc in locations])
    values, flags = inject_values(values, state.config.rho, state.rng["injection"])
    start = state.sensed
    state.locations = np.vstack([state.locations, locations])
    state.values = np.concatenate([state.values, values])
    state.injected = np.concatenate([state.injected, flags])
    state.flagged = np.concatenate([state.flagged, np.zeros(len(values), dtype=bool)])
    return np.arange(start, state.sensed)


def _apply_detector(state, new_idx):
    """Set flags per detector mode; returns indices examined this epoch."""
    mode = state.config.detector_mode
    if mode == "none":
        return new_idx
    if mode == "oracle_labels":
        state.flagged[new_idx] = state.injected[new_idx]
        state.occurrence += outlier_occurrence_grid(state.locations[new_idx][state.flagged[new_idx]], state.geometry)
        return new_idx
    model = fit_copod(state.features(), state.config.contamination)
    if mode == "copod_batch":
        state.flagged[new_idx] = detect(model, state.features(new_idx))
        state.occurrence += outlier_occurrence_grid(state.locations[new_idx][state.flagged[new_idx]], state.geometry)
        return new_idx
    state.flagged[:] = detect(model, state.features())
    state.occurrence = outlier_occurrence_grid(state.locations[state.flagged], state.geometry)
    return np.arange(state.sensed)


def _refresh_prediction(state):
    mean, std = gpr.predict(state.gp, state.prep.transform(state.queries_raw))
    state.pred_mean = state.prep.inverse_transform_targets(mean)
    state.pred_std = std


def _record(state, examined, batch_size, retries=0, trajectory=()):
    f = state.flagged[examined]
    inj = state.injected[examined]
    rec = EpochRecord(
        epoch=state.epoch,
        samples=state.sensed,
        rmse=rmse(state.pred_mean, state.truth),
        batch_size=batch_size,
        n_filtered=int(f.sum()),
        n_false_alarms=int((f & ~inj).sum()),
        n_missed=int((~f & inj).sum()),
        n_retained=int((~state.flagged).sum()),
        cum_false_alarms=int((state.flagged & ~state.injected).sum()),
        cum_missed=int((~state.flagged & state.injected).sum()),
        retries=retries,
        trajectory=[tuple(p) for p in trajectory],
    )
    state.records.append(rec)
    return rec


def start_run(config, world=None):
    """Pilot survey along the Bezier loop, preprocessing fit and initial GP."""
    world = build_world(config) if world is None else world
    state = RunState(config, world)
    path = bezier_pilot_path(world.extent, config.pilot_samples)
    new_idx = _sense_batch(state, path)
    examined = _apply_detector(state, new_idx)
    keep = ~state.flagged
    state.prep = Preprocessor().fit(world.extent, state.values[keep])
    data = state.training_data()
    init = gpr.Hyperparams.default(2)
    state.hp = gpr.optimize_hyperparams(data, init, config.init_opt_iters, config.learning_rate)
    state.gp = gpr.fit(data, state.hp)
    _refresh_prediction(state)
    tangent = path[-1] - path[-2]
    state.pose = RobotState(path[-1, 0], path[-1, 1], math.atan2(tangent[1], tangent[0]))
    _record(state, examined, len(new_idx), trajectory=[state.pose.as_tuple()])
    return state


def run_pilot(config, world=None):
    state = start_run(config, world)
    return state.training_data(), state.prep, state.hp


def _face_center(state):
    cx = (state.geometry.x1_min + state.geometry.x1_max) / 2
    cy = (state.geometry.x2_min + state.geometry.x2_max) / 2
    return RobotState(state.pose.x1, state.pose.x2, math.atan2(cy - state.pose.x2, cx - state.pose.x1))


def plan(state, maps, debug_tree=None):
    cfg = state.config
    lookup = RewardLookup(maps.layers, state.geometry)
    retries = 0
    while True:
        result = search(
            state.pose, lookup, cfg.search, state.rng["search"], cfg.motion, state.workspace,
            expansion_rng=state.rng["expansion"],
        )
        if debug_tree is not None:
            debug_tree.append(result.root)
        if not result.terminal:
            return result, retries
        if retries >= 1:
            raise PlanningFailure(
                f"no feasible action at pose {state.pose.as_tuple()} after heading reset", epoch=state.epoch
            )
        retries += 1
        state.pose = _face_center(state)


def run_epoch(state, debug_tree=None):
    cfg = state.config
    if state.remaining <= 0:
        raise ValueError("sampling budget exhausted")
    state.epoch += 1
    maps = build_reward_maps(state.gp, state.occurrence, cfg, std=state.pred_std)
    result, retries = plan(state, maps, debug_tree)
    poses = []
    pose = state.pose
    for u in result.steering[: state.remaining]:
        pose = dubins_step(pose, u, cfg.motion)
        poses.append(pose)
    state.pose = pose
    new_idx = _sense_batch(state, np.array([[p.x1, p.x2] for p in poses]))
    examined = _apply_detector(state, new_idx)
    data = state.training_data()
    state.hp = gpr.optimize_hyperparams(data, state.hp, cfg.epoch_opt_iters, cfg.learning_rate)
    state.gp = gpr.fit(data, state.hp)
    _refresh_prediction(state)
    return _record(state, examined, len(new_idx), retries, [p.as_tuple() for p in poses])


def run_experiment(config, world=None, debug_tree=None):
    """Pilot then epochs until the budget is spent; returns all records in order.

    The first record (epoch 0) describes the model right after the pilot.
    """
    try:
        state = start_run(config, world)
    except NumericalFailure as exc:
        exc.epoch = 0
        raise
    while state.remaining > 0:
        try:
            run_epoch(state, debug_tree)
        except NumericalFailure as exc:
            exc.epoch = state.epoch
            raise
    return state.records
