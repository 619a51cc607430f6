"""
Experiment pipelines and run-directory persistence.

Every experiment is described by an ExperimentConfig (a JSON document plus
command-line overrides) and writes into its own run directory:

    config.json    resolved configuration
    seeds.json     seed manifest
    results.csv    one row per (curve, profile, base, seed) cell, append-only
    timings.csv    wall-time of every cell
    profiles/      every Profile JSON the run produced or consumed
    episodes.jsonl RL episode records (rl kinds only)

Re-running a configuration in an existing run directory skips the cells
already present in results.csv.
"""

import argparse
import csv
import hashlib
import json
import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from scripts.datasets import ingest_dataset
from scripts.netzoo import build_network
from scripts.ppo import PpoConfig, load_policy, ppo_train, rollout_profile, save_policy, write_curve
from scripts.profiles import (
    Profile,
    compression_of,
    family_profile,
    random_profile,
    solve_k_for_cf,
)
from scripts.pruning_engine import PIPELINES, PruneJob, prune_and_finetune
from scripts.rewards import RewardConfig
from scripts.rl_env import CircularEnvQueue, PruningEnv, SurrogateEnv
from scripts.trainer import TrainConfig, evaluate, fit, init_network, load_net, save_net
from utils.exceptions import ConfigurationError, InfeasibleTargetError

logger = logging.getLogger(__name__)

RESULTS_SCHEMA = "results-v1"
RESULT_COLUMNS = ("experiment_id", "curve", "profile", "base", "seed", "cf", "c", "accuracy")
CURVE_SUMMARY_COLUMNS = ("cf_target", "cf", "mean", "std", "n")

KINDS = ("init-sweep", "metric-sweep", "profile-sweep", "random-search", "transfer-eval",
         "rl-train", "rl-transfer")
SWEEP_CURVES = {
    "init-sweep": ("pretrained", "random"),
    "metric-sweep": ("random", "l1", "taylor"),
    "profile-sweep": ("equal", "increasing", "decreasing", "random"),
}
# pipeline of an experiment kind whose config leaves it unset
DEFAULT_PIPELINES = {
    "metric-sweep": "layerwise",
}


@dataclass
class ExperimentConfig:
    """
    Declarative description of one experiment.

    Attributes:
        experiment_id: Name of the run directory
        kind: One of KINDS
        arch, width: Architecture ("cnet" or "resnet20") and its width
        dataset: Dataset description (target dataset for transfers)
        source_datasets: Datasets of the RL queue / transfer sources
        base_train: TrainConfig fields of base-network training
        finetune: TrainConfig fields of every fine-tune
        seeds: Repetition seeds of pruning and fine-tuning
        base_seeds: Seeds of the base networks (one network per seed)
        cf_grid: Compression-factor targets of the sweeps
        profiles: Random-search sample count
        cf_max: Compression-factor cap of the random search
        search_seed: Seed of the random-search profiles
        profile_paths: Profile files or directories to transfer
        reference_run: Random-search run directory of the target dataset
        window: Relative CF window of percentile comparisons
        strategy, init: Pruning job settings
        pipeline: Prune-and-fine-tune pipeline; None picks the kind's default
            (layer-wise for the metric sweep, one-shot otherwise)
        stage_fraction: Share of the fine-tuning epochs after every layer-wise stage
        reward, ppo: RewardConfig / PpoConfig fields
        surrogate: Train the policy against the surrogate environment
        policy_path: Existing policy checkpoint (rl-transfer)
        obs_mode: Observation mode of the RL environments
        dtype: Scalar type of the runs
        workers: Worker-pool size
        max_retries: Retries of diverged fine-tunes
        output_dir: Run directory; defaults to <PRUNE_OUTPUT_ROOT>/<experiment_id>
    """

    experiment_id: str
    kind: str
    arch: str = "cnet"
    width: int = 8
    dataset: dict = field(default_factory=lambda: {"kind": "synthetic"})
    source_datasets: list = field(default_factory=list)
    base_train: dict = field(default_factory=lambda: {"epochs": 20, "lr": 0.05})
    finetune: dict = field(default_factory=lambda: {"epochs": 5, "lr": 0.01})
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    base_seeds: list = field(default_factory=lambda: [0])
    cf_grid: list = field(default_factory=lambda: [1.0, 2.0, 3.0, 4.0, 6.0])
    profiles: int = 60
    cf_max: float = 6.0
    search_seed: int = 0
    profile_paths: list = field(default_factory=list)
    reference_run: str = None
    window: float = 0.1
    strategy: str = "random"
    init: str = "pretrained"
    pipeline: str = None
    stage_fraction: float = 0.1
    reward: dict = field(default_factory=dict)
    ppo: dict = field(default_factory=dict)
    surrogate: bool = False
    policy_path: str = None
    obs_mode: str = "masked"
    dtype: str = "float32"
    workers: int = 1
    max_retries: int = 2
    output_dir: str = None

    @classmethod
    def from_dict(cls, data, overrides=None):
        merged = dict(data)
        merged.update({k: v for k, v in (overrides or {}).items() if v is not None})
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(merged) - known)
        if unknown:
            raise ConfigurationError(f"Unknown experiment config keys: {', '.join(unknown)}.",
                                     field=unknown[0])
        for required in ("experiment_id", "kind"):
            if required not in merged:
                raise ConfigurationError(f"Experiment config needs '{required}'.", field=required)
        return cls(**merged)

    def to_dict(self):
        return asdict(self)

    def validate(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"Unknown experiment kind '{self.kind}'. Use one of: {', '.join(KINDS)}.",
                                     field="kind")
        if not self.seeds:
            raise ConfigurationError("The seed list is empty.", field="seeds")
        if not self.base_seeds:
            raise ConfigurationError("The base seed list is empty.", field="base_seeds")
        if self.profiles < 1:
            raise ConfigurationError("profiles must be at least 1.", field="profiles")
        if any(cf < 1 for cf in self.cf_grid):
            raise ConfigurationError("Compression factors are at least 1.", field="cf_grid")
        if self.workers < 1:
            raise ConfigurationError("workers must be at least 1.", field="workers")
        if self.pipeline is not None and self.pipeline not in PIPELINES:
            raise ConfigurationError(f"Unknown pipeline '{self.pipeline}'.", field="pipeline")
        if not 0 <= self.stage_fraction <= 1:
            raise ConfigurationError("stage_fraction must lie in [0, 1].", field="stage_fraction")
        for path in self.profile_paths:
            if not Path(path).exists():
                raise ConfigurationError(f"Profile path not found: {path}", field="profile_paths")
        for name in ("reference_run", "policy_path"):
            value = getattr(self, name)
            if value and not Path(value).exists():
                raise ConfigurationError(f"{name} not found: {value}", field=name)
        if self.kind == "transfer-eval" and not self.profile_paths:
            raise ConfigurationError("transfer-eval needs profile_paths.", field="profile_paths")
        self.train_config().validate()
        self.finetune_config().validate()
        self.reward_config().validate()
        self.ppo_config().validate()
        return self

    @property
    def job_pipeline(self):
        return self.pipeline or DEFAULT_PIPELINES.get(self.kind, "one-shot")

    def train_config(self):
        return _config(TrainConfig, self.base_train, "base_train")

    def finetune_config(self):
        return _config(TrainConfig, self.finetune, "finetune")

    def reward_config(self):
        return _config(RewardConfig, self.reward, "reward")

    def ppo_config(self):
        data = dict(self.ppo)
        data.setdefault("workers", self.workers)
        return _config(PpoConfig, data, "ppo")

    def seed_manifest(self):
        return {
            "seeds": list(self.seeds),
            "base_seeds": list(self.base_seeds),
            "search_seed": self.search_seed,
            "base_train_seed": self.train_config().seed,
            "ppo_seed": self.ppo_config().seed,
        }


def _config(cls, data, name):
    try:
        return cls.from_dict(data) if hasattr(cls, "from_dict") else cls(**data)
    except TypeError as e:
        raise ConfigurationError(f"Invalid '{name}' settings: {e}", field=name)


def load_experiment_config(path, overrides=None):
    """
    Load an experiment config from a JSON file.

    Args:
        path: JSON file
        overrides: Mapping of field -> value taking precedence over the file (None values ignored)
    """
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"Experiment config not found: {path}", field="config")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"Experiment config {path} is not valid JSON: {e}", field="config")
    return ExperimentConfig.from_dict(data, overrides).validate()


def cell_seed(*parts):
    """Stable 63-bit seed derived from a sequence of integers"""
    state = np.random.SeedSequence([int(p) for p in parts]).generate_state(2, np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1]))


@dataclass(frozen=True)
class ResultRow:
    experiment_id: str
    curve: str
    profile: str
    base: int
    seed: int
    cf: float
    c: float
    accuracy: float
    wall_time: float = 0.0

    @property
    def key(self):
        return (self.curve, self.profile, str(self.base), str(self.seed))


class RunDirectory:
    """
    Run directory with a single serialized appender for results and timings.
    """

    def __init__(self, path):
        self.path = Path(path)
        self.path.mkdir(parents=True, exist_ok=True)
        self.profiles_dir = self.path / "profiles"
        self.results_path = self.path / "results.csv"
        self.timings_path = self.path / "timings.csv"
        self.episodes_path = self.path / "episodes.jsonl"
        self._lock = threading.Lock()
        self._existing = self._read_existing()

    def prepare(self, cfg):
        (self.path / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
        (self.path / "seeds.json").write_text(json.dumps(cfg.seed_manifest(), indent=2, sort_keys=True) + "\n")
        self.profiles_dir.mkdir(exist_ok=True)
        return self

    def _read_existing(self):
        return {row.key: row for row in read_results(self.results_path)} if self.results_path.exists() else {}

    def completed(self, key):
        return self._existing.get(tuple(str(k) if i >= 2 else k for i, k in enumerate(key)))

    def append(self, row):
        with self._lock:
            new_file = not self.results_path.exists()
            with open(self.results_path, "a", newline="") as f:
                if new_file:
                    f.write(f"# schema: {RESULTS_SCHEMA}\n")
                writer = csv.writer(f)
                if new_file:
                    writer.writerow(RESULT_COLUMNS)
                writer.writerow([row.experiment_id, row.curve, row.profile, row.base, row.seed,
                                 repr(row.cf), repr(row.c), repr(row.accuracy)])
            new_timing = not self.timings_path.exists()
            with open(self.timings_path, "a", newline="") as f:
                writer = csv.writer(f)
                if new_timing:
                    writer.writerow(("curve", "profile", "base", "seed", "wall_time"))
                writer.writerow([row.curve, row.profile, row.base, row.seed, f"{row.wall_time:.3f}"])
            self._existing[row.key] = row

    def save_profile(self, name, profile):
        return profile.save(self.profiles_dir / f"{name}.json")

    def append_episodes(self, episodes, iteration):
        with self._lock, open(self.episodes_path, "a") as f:
            for record in episodes:
                f.write(json.dumps({"iteration": iteration, **record.to_dict()}, sort_keys=True) + "\n")

    def write_csv(self, name, columns, rows):
        path = self.path / name
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(columns)
            for row in rows:
                writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
        return path


def read_results(path):
    """Rows of a results.csv (schema comment skipped)"""
    rows = []
    with open(path, newline="") as f:
        lines = (line for line in f if not line.startswith("#"))
        for record in csv.DictReader(lines):
            rows.append(ResultRow(record["experiment_id"], record["curve"], record["profile"],
                                  int(record["base"]), int(record["seed"]), float(record["cf"]),
                                  float(record["c"]), float(record["accuracy"])))
    return rows


class Experiment:
    """
    Shared plumbing of all pipelines: data, cached base networks and the job pool.
    """

    def __init__(self, cfg, run_dir, cache_dir=None):
        self.cfg = cfg
        self.run = RunDirectory(run_dir).prepare(cfg)
        self.cache_dir = Path(cache_dir) if cache_dir else self.run.path / "bases"
        self._data = {}
        self._bases = {}

    def data(self, source=None):
        source = source or self.cfg.dataset
        key = json.dumps(source, sort_keys=True)
        if key not in self._data:
            self._data[key] = ingest_dataset(source, self.cfg.dtype)
        return self._data[key]

    def spec_for(self, data):
        return build_network(self.cfg.arch, self.cfg.width, data.num_classes, data.image_shape)

    def base_net(self, data_source=None, base_seed=None):
        """
        Trained base network for a dataset, cached on disk by its training recipe.
        """
        data_source = data_source or self.cfg.dataset
        base_seed = self.cfg.base_seeds[0] if base_seed is None else base_seed
        recipe = json.dumps({"arch": self.cfg.arch, "width": self.cfg.width, "data": data_source,
                             "train": self.cfg.base_train, "seed": base_seed, "dtype": self.cfg.dtype},
                            sort_keys=True)
        digest = hashlib.sha1(recipe.encode("utf-8")).hexdigest()[:12]
        if digest in self._bases:
            return self._bases[digest]

        path = self.cache_dir / f"{self.cfg.arch}-{self.cfg.width}_{digest}.ckpt"
        data = self.data(data_source)
        if path.exists():
            net = load_net(path)
        else:
            logger.info("training base network %s-%d (seed %d) on %s", self.cfg.arch, self.cfg.width,
                        base_seed, data.name)
            net = init_network(self.spec_for(data), base_seed, self.cfg.dtype)
            train_cfg = self.cfg.train_config()
            net, _ = fit(net, data, TrainConfig.from_dict({**train_cfg.to_dict(), "seed": base_seed}))
            net.metadata = {"accuracy": evaluate(net, data.val), "dataset": data.name,
                            "base_seed": base_seed}
            save_net(path, net)
        self._bases[digest] = net
        return net

    def map(self, func, items):
        """Run jobs on the bounded worker pool; results come back in submission order."""
        items = list(items)
        if self.cfg.workers > 1 and len(items) > 1:
            with ThreadPoolExecutor(max_workers=self.cfg.workers) as pool:
                yield from pool.map(func, items)
        else:
            for item in items:
                yield func(item)

    def prune_cell(self, curve, profile_name, base_index, seed, job_factory, data):
        """
        Run (or reuse) one result cell.

        Args:
            job_factory: Callable returning the PruneJob of this cell
        """
        key = (curve, profile_name, base_index, seed)
        done = self.run.completed(key)
        if done is not None:
            return done
        start = time.perf_counter()
        result = prune_and_finetune(job_factory(), data, self.cfg.max_retries)
        return ResultRow(self.cfg.experiment_id, curve, profile_name, base_index, seed,
                         result.cf, result.c, result.accuracy, time.perf_counter() - start)

    def record(self, rows):
        """Append rows produced by `map`, in order, skipping cells already on disk."""
        out = []
        for row in rows:
            if self.run.completed(row.key) is None:
                self.run.append(row)
            out.append(row)
        return out


def window_percentile(accuracy, cf, reference, window=0.1):
    """
    Percentile of `accuracy` among reference (cf, accuracy) pairs within +-window relative CF.

    Returns:
        (percentile in [0, 100], number of reference points, their median); None
        percentile when the window is empty
    """
    inside = [a for c, a in reference if abs(c - cf) <= window * cf]
    if not inside:
        return None, 0, None
    inside = np.asarray(inside)
    return float(100.0 * np.mean(inside <= accuracy)), len(inside), float(np.median(inside))


def _finetune(cfg, seed):
    return TrainConfig.from_dict({**cfg.finetune_config().to_dict(), "seed": seed})


def _sample_capped_profiles(spec, count, cf_max, search_seed):
    profiles = []
    for index in range(count):
        for attempt in range(1000):
            profile = random_profile(len(spec.flags), seed=[search_seed, index, attempt], arch=spec.arch_id)
            if compression_of(profile, spec)[0] <= cf_max:
                break
        else:
            raise ConfigurationError(f"Could not sample a profile with CF <= {cf_max}.", field="cf_max")
        profiles.append(profile)
    return profiles


def run_random_search(cfg, run_dir, cache_dir=None):
    """
    Exhaustive random search: N capped random profiles, each pruned and
    fine-tuned on every base network.

    Returns:
        (rows, top): result rows and a mapping CF bucket -> best Profile
    """
    exp = Experiment(cfg, run_dir, cache_dir)
    data = exp.data()
    bases = [exp.base_net(base_seed=s) for s in cfg.base_seeds]
    spec = bases[0].spec
    profiles = _sample_capped_profiles(spec, cfg.profiles, cfg.cf_max, cfg.search_seed)
    names = [f"p{i:04d}" for i in range(len(profiles))]
    for name, profile in zip(names, profiles):
        exp.run.save_profile(name, profile)

    def job(item):
        name, profile, b = item
        seed = cell_seed(profile.seed, b)
        return exp.prune_cell("random-search", name, b, seed, lambda: PruneJob(
            bases[b], profile=profile, strategy=cfg.strategy, init=cfg.init,
            train_config=_finetune(cfg, seed), pipeline=cfg.job_pipeline,
            stage_fraction=cfg.stage_fraction, seed=seed), data)

    cells = [(n, p, b) for n, p in zip(names, profiles) for b in range(len(bases))]
    rows = exp.record(exp.map(job, cells))

    top = select_top_profiles(rows, dict(zip(names, profiles)), cfg.window)
    for bucket, (name, profile) in sorted(top.items()):
        exp.run.save_profile(f"top/cf{bucket}_{name}", profile)
    logger.info("random search: %d rows, top profiles in CF buckets %s", len(rows), sorted(top))
    return rows, {bucket: profile for bucket, (_, profile) in top.items()}


def profile_means(rows):
    """Mean (cf, accuracy) per profile over base networks and seeds"""
    grouped = {}
    for row in rows:
        grouped.setdefault(row.profile, []).append(row)
    return {name: (items[0].cf, float(np.mean([r.accuracy for r in items]))) for name, items in grouped.items()}


def select_top_profiles(rows, profiles, window=0.1):
    """
    Best profile per integer CF bucket, among profiles that rank first within
    their own +-window CF neighbourhood.

    Returns:
        Mapping bucket -> (profile name, Profile)
    """
    means = profile_means(rows)
    reference = list(means.values())
    top = {}
    for name, (cf, accuracy) in sorted(means.items()):
        percentile, _, _ = window_percentile(accuracy, cf, reference, window)
        if percentile != 100.0:
            continue
        bucket = int(np.floor(cf))
        if bucket not in top or accuracy > means[top[bucket]][1]:
            top[bucket] = name
    return {bucket: (name, profiles[name]) for bucket, name in top.items()}


def _load_profiles(paths):
    found = []
    for path in paths:
        path = Path(path)
        files = sorted(path.rglob("*.json")) if path.is_dir() else [path]
        found += [(f.stem, Profile.load(f)) for f in files]
    if not found:
        raise ConfigurationError("No profile files found.", field="profile_paths")
    return found


def _reference_rows(cfg, run_dir, cache_dir):
    if cfg.reference_run:
        return read_results(Path(cfg.reference_run) / "results.csv")
    reference_cfg = ExperimentConfig.from_dict({**cfg.to_dict(), "kind": "random-search",
                                                "experiment_id": f"{cfg.experiment_id}-reference",
                                                "output_dir": None, "profile_paths": []})
    rows, _ = run_random_search(reference_cfg, Path(run_dir) / "reference", cache_dir)
    return rows


def run_transfer_eval(cfg, run_dir, cache_dir=None, profiles=None):
    """
    Out-of-the-box transfer: prune and fine-tune each profile on the target
    dataset and rank it against the target's own random-search distribution.

    Args:
        profiles: Optional list of (name, Profile); defaults to cfg.profile_paths

    Returns:
        List of ranking dicts (profile, cf, accuracy, percentile, window_size, window_median)
    """
    reference = list(profile_means(_reference_rows(cfg, run_dir, cache_dir)).values())
    exp = Experiment(cfg, run_dir, cache_dir)
    data = exp.data()
    bases = [exp.base_net(base_seed=s) for s in cfg.base_seeds]
    spec = bases[0].spec
    profiles = profiles if profiles is not None else _load_profiles(cfg.profile_paths)
    for name, profile in profiles:
        profile.check(spec)
        exp.run.save_profile(f"transferred/{name}", profile)

    def job(item):
        name, profile, b = item
        seed = cell_seed(profile.seed, b)
        return exp.prune_cell("transfer", name, b, seed, lambda: PruneJob(
            bases[b], profile=profile, strategy=cfg.strategy, init=cfg.init,
            train_config=_finetune(cfg, seed), pipeline=cfg.job_pipeline,
            stage_fraction=cfg.stage_fraction, seed=seed), data)

    cells = [(n, p, b) for n, p in profiles for b in range(len(bases))]
    rows = exp.record(exp.map(job, cells))

    ranking = []
    for name, (cf, accuracy) in profile_means(rows).items():
        percentile, size, median = window_percentile(accuracy, cf, reference, cfg.window)
        ranking.append({"profile": name, "cf": cf, "accuracy": accuracy, "percentile": percentile,
                        "window_size": size, "window_median": median})
    ranking.sort(key=lambda r: (-(r["percentile"] if r["percentile"] is not None else -1), r["profile"]))
    exp.run.write_csv("transfer.csv", ("profile", "cf", "accuracy", "percentile", "window_size", "window_median"),
                      [tuple(r.values()) for r in ranking])
    return ranking


def _sweep_profile(spec, family, cf_target, seed):
    try:
        param = solve_k_for_cf(spec, family, cf_target, strict=False, seed=seed)
    except InfeasibleTargetError as e:
        logger.warning("skipping CF %.3g for %s: %s", cf_target, family, e.message.splitlines()[0])
        return None
    return family_profile(spec, family, param, seed)


def sweep_job_settings(kind, curve, cfg):
    """
    (strategy, init, pipeline) of the prune jobs on one sweep curve.

    Randomly initialized networks are always pruned one-shot.
    """
    init = curve if kind == "init-sweep" else cfg.init
    strategy = curve if kind == "metric-sweep" else cfg.strategy
    pipeline = cfg.job_pipeline if init == "pretrained" else "one-shot"
    return strategy, init, pipeline


def run_sweep_pipeline(kind, cfg, run_dir, cache_dir=None):
    """
    Sweep pipelines: one curve per init strategy, channel metric or profile
    family, each point averaged over the configured seeds.

    Returns:
        Mapping curve -> list of (cf_target, cf, mean, std, n)
    """
    if kind not in SWEEP_CURVES:
        raise ConfigurationError(f"'{kind}' is not a sweep pipeline.", field="kind")
    exp = Experiment(cfg, run_dir, cache_dir)
    data = exp.data()
    base = exp.base_net()
    spec = base.spec

    cells = []
    for curve in SWEEP_CURVES[kind]:
        family = curve if kind == "profile-sweep" else "equal"
        for cf_target in cfg.cf_grid:
            profile = _sweep_profile(spec, family, cf_target, cfg.search_seed)
            if profile is None:
                continue
            name = f"{curve}_cf{cf_target:g}"
            exp.run.save_profile(name, profile)
            for seed in cfg.seeds:
                cells.append((curve, cf_target, name, profile, seed))

    def job(item):
        curve, _, name, profile, seed = item
        strategy, init, pipeline = sweep_job_settings(kind, curve, cfg)
        return exp.prune_cell(curve, name, 0, seed, lambda: PruneJob(
            base, profile=profile, strategy=strategy, init=init,
            train_config=_finetune(cfg, seed), pipeline=pipeline,
            stage_fraction=cfg.stage_fraction, seed=seed), data)

    rows = exp.record(exp.map(job, cells))

    curves = {}
    by_point = {}
    for (curve, cf_target, name, _, _), row in zip(cells, rows):
        by_point.setdefault((curve, cf_target), []).append(row)
    for (curve, cf_target), items in by_point.items():
        accuracies = np.array([r.accuracy for r in items])
        curves.setdefault(curve, []).append(
            (cf_target, items[0].cf, float(accuracies.mean()), float(accuracies.std()), len(items))
        )
    for curve, points in curves.items():
        exp.run.write_csv(f"{kind}/{curve}.csv", CURVE_SUMMARY_COLUMNS, points)
    return curves


def build_queue(exp, sources=None):
    """Circular queue of real (or surrogate) environments, one per source dataset."""
    cfg = exp.cfg
    reward = cfg.reward_config()
    sources = sources or cfg.source_datasets or [cfg.dataset]
    envs = []
    for index, source in enumerate(sources):
        if cfg.surrogate:
            data = exp.data(source)
            envs.append(SurrogateEnv(exp.spec_for(data), reward, seed=cfg.search_seed + index))
            continue
        net = exp.base_net(source)
        data = exp.data(source)
        envs.append(PruningEnv(data.name, net, data, reward, cfg.finetune_config(), cfg.obs_mode,
                               seed=cell_seed(cfg.search_seed, index),
                               base_accuracy=net.metadata.get("accuracy"),
                               max_retries=cfg.max_retries))
    return CircularEnvQueue(envs)


def run_rl_train(cfg, run_dir, cache_dir=None):
    """
    Train a PPO policy on the environment queue; writes the policy
    checkpoint, the training curve, every episode and one deterministic
    rollout profile per environment.

    Returns:
        (policy, curve, profiles)
    """
    exp = Experiment(cfg, run_dir, cache_dir)
    queue = build_queue(exp)
    ppo_cfg = cfg.ppo_config()
    if exp.run.episodes_path.exists():
        exp.run.episodes_path.unlink()

    policy, curve = ppo_train(queue, ppo_cfg,
                              on_iteration=lambda i, episodes, row: exp.run.append_episodes(episodes, i))
    checkpoint = save_policy(exp.run.path / "policy.ckpt", policy, ppo_cfg)
    write_curve(curve, exp.run.path / "training_curve.csv")

    profiles = []
    for env in queue.envs:
        profile = rollout_profile(policy, env, deterministic=True, seed=cfg.search_seed,
                                  checkpoint_id=str(checkpoint.name))
        exp.run.save_profile(f"rl_{env.env_id}", profile)
        profiles.append((f"rl_{env.env_id}", profile))
    return policy, curve, profiles


def run_rl_transfer(cfg, run_dir, cache_dir=None):
    """
    Train (or load) a policy on the source datasets and transfer its
    rollout profile to the target dataset.
    """
    if cfg.policy_path:
        policy = load_policy(cfg.policy_path)
        exp = Experiment(cfg, Path(run_dir) / "policy", cache_dir)
        queue = build_queue(exp)
        profiles = [(f"rl_{env.env_id}", rollout_profile(policy, env, True, cfg.search_seed,
                                                        Path(cfg.policy_path).name))
                    for env in queue.envs]
    else:
        _, _, profiles = run_rl_train(cfg, Path(run_dir) / "policy", cache_dir)
    transfer_cfg = ExperimentConfig.from_dict({**cfg.to_dict(), "surrogate": False})
    return run_transfer_eval(transfer_cfg, run_dir, cache_dir, profiles)


def run_experiment(cfg, run_dir, cache_dir=None):
    """Dispatch an experiment by kind."""
    cfg.validate()
    if cfg.kind in SWEEP_CURVES:
        return run_sweep_pipeline(cfg.kind, cfg, run_dir, cache_dir)
    if cfg.kind == "random-search":
        return run_random_search(cfg, run_dir, cache_dir)
    if cfg.kind == "transfer-eval":
        return run_transfer_eval(cfg, run_dir, cache_dir)
    if cfg.kind == "rl-train":
        return run_rl_train(cfg, run_dir, cache_dir)
    return run_rl_transfer(cfg, run_dir, cache_dir)


def add_experiment_arguments(parser, sweeps=False):
    """
    Command-line flags mirroring ExperimentConfig fields.

    Every flag defaults to None so that only flags given on the command line
    override the config file.
    """
    parser.add_argument('--config', type=str, help='Experiment config JSON file')
    parser.add_argument('--experiment-id', type=str, help='Run directory name under PRUNE_OUTPUT_ROOT')
    parser.add_argument('--output-dir', type=str, help='Explicit run directory')
    parser.add_argument('--arch', choices=["cnet", "resnet20"], help='Architecture')
    parser.add_argument('--width', type=int, help='Architecture width (C-NET channels, ResNet base width)')
    parser.add_argument('--seeds', type=_int_list, help='Comma-separated repetition seeds')
    parser.add_argument('--base-seeds', type=_int_list, help='Comma-separated base network seeds')
    parser.add_argument('--epochs', type=int, help='Fine-tuning epochs')
    parser.add_argument('--lr', type=float, help='Fine-tuning learning rate')
    parser.add_argument('--base-epochs', type=int, help='Base network training epochs')
    parser.add_argument('--strategy', choices=["random", "l1", "taylor"], help='Channel selection strategy')
    parser.add_argument('--init', choices=["pretrained", "random"], help='Initialization of pruned networks')
    parser.add_argument('--pipeline', choices=["one-shot", "layerwise"], help='Prune-and-fine-tune pipeline')
    parser.add_argument('--stage-fraction', type=float,
                        help='Share of the fine-tuning epochs after every layer-wise stage')
    parser.add_argument('--workers', type=int, help='Worker pool size (default: PRUNE_WORKERS)')
    parser.add_argument('--dtype', choices=["float32", "float64"], help='Scalar type (default: PRUNE_DTYPE)')
    add_dataset_arguments(parser)
    if sweeps:
        parser.add_argument('--cf-grid', type=_float_list, help='Comma-separated compression-factor targets')


def add_dataset_arguments(parser):
    parser.add_argument('--cifar', type=str, help='CIFAR-10 binary directory (default: PRUNE_DATA_ROOT)')
    parser.add_argument('--subset', type=int, help='Balanced CIFAR-10 training subset size')
    parser.add_argument('--dataset-seed', type=int, help='Synthetic dataset seed')
    parser.add_argument('--image-size', type=int, help='Synthetic image size')
    parser.add_argument('--classes', type=int, help='Synthetic class count')
    parser.add_argument('--samples', type=int, help='Synthetic sample count')


def _int_list(text):
    return [int(v) for v in text.split(",") if v.strip()]


def _float_list(text):
    return [float(v) for v in text.split(",") if v.strip()]


def dataset_from_args(args, base=None, prune_config=None):
    """
    Dataset description from command-line flags layered over `base`.
    CIFAR-10 descriptions without a path fall back to PRUNE_DATA_ROOT.
    """
    source = dict(base or {"kind": "synthetic"})
    if getattr(args, "cifar", None):
        source = {"kind": "cifar10", "path": args.cifar}
    if getattr(args, "subset", None) is not None:
        source["subset"] = args.subset
    synthetic = {"seed": "dataset_seed", "image_size": "image_size", "num_classes": "classes",
                 "samples": "samples"}
    if source.get("kind", "synthetic") == "synthetic":
        for key, attr in synthetic.items():
            value = getattr(args, attr, None)
            if value is not None:
                source[key] = value
    if source.get("kind") == "cifar10" and not source.get("path") and prune_config is not None:
        source["path"] = str(prune_config.cifar_dir)
    return source


def experiment_from_args(args, kind, prune_config, extra=None):
    """
    Resolve the ExperimentConfig of a CLI invocation.

    Args:
        args: argparse namespace built with add_experiment_arguments
        kind: Experiment kind of the verb (a config file may not change it)
        prune_config: Validated PruneConfig (environment defaults)
        extra: Further overrides collected by the verb

    Returns:
        (ExperimentConfig, run directory Path, base-network cache Path)
    """
    data = {}
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise ConfigurationError(f"Experiment config not found: {path}", field="config")
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"Experiment config {path} is not valid JSON: {e}", field="config")
    data.setdefault("experiment_id", args.experiment_id or kind)
    data["kind"] = kind
    data.setdefault("workers", prune_config.workers)
    data.setdefault("max_retries", prune_config.max_retries)
    data.setdefault("dtype", prune_config.dtype)

    overrides = {
        "experiment_id": args.experiment_id,
        "output_dir": args.output_dir,
        "arch": args.arch,
        "width": args.width,
        "seeds": args.seeds,
        "base_seeds": args.base_seeds,
        "strategy": args.strategy,
        "init": args.init,
        "pipeline": args.pipeline,
        "stage_fraction": args.stage_fraction,
        "workers": args.workers,
        "dtype": args.dtype,
        "cf_grid": getattr(args, "cf_grid", None),
    }
    overrides.update(extra or {})
    for key, value in overrides.items():
        if isinstance(value, dict):
            overrides[key] = {**data.get(key, {}), **value}
    finetune = dict(data.get("finetune", ExperimentConfig.__dataclass_fields__["finetune"].default_factory()))
    if args.epochs is not None:
        finetune["epochs"] = args.epochs
    if args.lr is not None:
        finetune["lr"] = args.lr
    base_train = dict(data.get("base_train", ExperimentConfig.__dataclass_fields__["base_train"].default_factory()))
    if args.base_epochs is not None:
        base_train["epochs"] = args.base_epochs
    data["finetune"] = finetune
    data["base_train"] = base_train
    data["dataset"] = dataset_from_args(args, data.get("dataset"), prune_config)
    data["source_datasets"] = [dataset_from_args(argparse.Namespace(), s, prune_config)
                               for s in data.get("source_datasets", [])]

    cfg = ExperimentConfig.from_dict(data, overrides).validate()
    run_dir = Path(cfg.output_dir) if cfg.output_dir else prune_config.run_dir(cfg.experiment_id)
    return cfg, run_dir, prune_config.output_root / "bases"
