"""
The pruning MDP.

An episode walks the prune flags front to back. At step t the agent sees an
observation of flag t and answers with a retention fraction beta_t; the
channels of flag t are then drawn at random with exactly
retained_count(beta_t, c_t) survivors. The reward is zero until the last
flag, where the network is rebuilt, briefly fine-tuned and evaluated.

`SurrogateEnv` replaces the fine-tune with a closed-form accuracy model so
the learner can be exercised in milliseconds.
"""

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from scripts.metrics import taylor_scores
from scripts.profiles import (
    BETA_MIN,
    MaskSet,
    Profile,
    compression_of,
    family_profile,
    retained_count,
    solve_k_for_cf,
)
from scripts.pruning_engine import apply_masks, rebuild
from scripts.rewards import RewardConfig, episode_rewards
from scripts.trainer import TrainConfig, evaluate, fit
from utils.exceptions import ArchitectureMismatchError, ConfigurationError, UsageError
from utils.retry_handler import RetryHandler

logger = logging.getLogger(__name__)

DESCRIPTOR_WIDTH = 7
OBSERVATION_MODES = ("masked", "base")

SURROGATE_WIDTH = 0.15
SURROGATE_ACCURACY = 0.9


@dataclass(frozen=True)
class Observation:
    """
    Per-channel feature block padded to c_max, plus the layer descriptor
    (t/l, c_t/c_max, relative kernel area, stride, parameter share, pruned fraction
    so far, steps remaining/l).
    """

    features: np.ndarray
    descriptor: np.ndarray

    @property
    def vector(self):
        return np.concatenate([self.features, self.descriptor])

    @property
    def width(self):
        return self.features.shape[0] + self.descriptor.shape[0]


@dataclass
class EpisodeRecord:
    env_id: str
    observations: list = field(default_factory=list)
    actions: list = field(default_factory=list)
    betas: list = field(default_factory=list)
    log_probs: list = field(default_factory=list)
    values: list = field(default_factory=list)
    rewards: list = field(default_factory=list)
    accuracy: float = None
    compression: float = None
    seed: object = None

    @property
    def steps(self):
        return len(self.betas)

    @property
    def total_reward(self):
        return float(sum(self.rewards))

    def to_dict(self):
        return {
            "env_id": self.env_id,
            "seed": self.seed,
            "betas": [float(b) for b in self.betas],
            "actions": [float(a) for a in self.actions],
            "log_probs": [float(p) for p in self.log_probs],
            "values": [float(v) for v in self.values],
            "rewards": [float(r) for r in self.rewards],
            "accuracy": self.accuracy,
            "compression": self.compression,
        }


def clamp_action(action):
    """Affine clamp of a raw Gaussian action to [BETA_MIN, 1]"""
    return float(min(1.0, max(BETA_MIN, float(action))))


def layer_descriptors(spec):
    """
    Static part of every flag's descriptor: (c_t/c_max, kernel area, stride, parameter share).

    Kernel area is relative to the largest kernel among the flag owners.
    """
    lengths = spec.flag_lengths
    total = sum(_owner_params(spec, f, lengths) for f in spec.flags)
    max_area = max(spec.layer(f.owner).kernel ** 2 for f in spec.flags)
    rows = []
    for f in spec.flags:
        owner = spec.layer(f.owner)
        rows.append((f.length / spec.c_max, owner.kernel * owner.kernel / max_area, float(owner.stride),
                     _owner_params(spec, f, lengths) / total))
    return rows


def _owner_params(spec, flag, lengths):
    owner = spec.layer(flag.owner)
    cin = lengths[owner.in_flag] if owner.in_flag else owner.in_channels
    return owner.kernel * owner.kernel * cin * flag.length


def _descriptor(spec, t, cumulative_pruned, static):
    l = len(spec.flags)
    share = static[t] if t < l else (0.0, 0.0, 0.0, 0.0)
    return np.array([t / l, *share, cumulative_pruned, (l - t) / l], dtype=np.float64)


def _partial_pruned_fraction(spec, masks, upto):
    """Pruned parameter fraction when only flags before `upto` are pruned"""
    partial = {f.id: (masks[f.id] if i < upto else np.ones(f.length, dtype=bool))
               for i, f in enumerate(spec.flags)}
    return compression_of(partial, spec)[1]


def build_observation(net, t, betas, batch, masks=None, rng=None, mode="masked",
                      base_scores=None, static=None):
    """
    Observation of flag t under a partial profile.

    Args:
        net: Unpruned TrainedNet
        t: Flag index
        betas: Partial profile (beta_1..beta_t, then ones)
        batch: Validation Dataset (or batches) the Taylor features are measured on
        masks: MaskSet materialized from `betas`; drawn with `rng` when None
        rng: numpy Generator for the materialization
        mode: "masked" recomputes Taylor features on the zero-masked net,
            "base" reuses `base_scores` of the unpruned net
        base_scores: ChannelScores of the unpruned net (required in "base" mode)
        static: Cached layer_descriptors(spec)

    Returns:
        Observation whose entries are zero for pruned channels and padding
    """
    spec = net.spec
    if mode not in OBSERVATION_MODES:
        raise ConfigurationError(f"Unknown observation mode '{mode}'.", field="obs_mode")
    if masks is None:
        masks = _materialize_partial(spec, betas, rng if rng is not None else np.random.default_rng(0))
    static = static or layer_descriptors(spec)

    if mode == "masked":
        scores = taylor_scores(apply_masks(net, masks), batch)
    else:
        if base_scores is None:
            raise UsageError("Observation mode 'base' needs the unpruned net's Taylor scores.")
        scores = base_scores

    flag = spec.flags[t]
    features = np.zeros(spec.c_max)
    features[:flag.length] = np.where(masks[flag.id], scores[flag.id], 0.0)
    cumulative = _partial_pruned_fraction(spec, masks, t)
    return Observation(features, _descriptor(spec, t, cumulative, static))


def _materialize_partial(spec, betas, rng):
    masks = {}
    for f, beta in zip(spec.flags, betas):
        mask = np.zeros(f.length, dtype=bool)
        mask[rng.choice(f.length, size=retained_count(beta, f.length), replace=False)] = True
        masks[f.id] = mask
    return MaskSet(masks)


class _EpisodeState:
    """Bookkeeping shared by the real and surrogate environments"""

    def _begin(self, spec, seed):
        self._betas = [1.0] * len(spec.flags)
        self._masks = {f.id: np.ones(f.length, dtype=bool) for f in spec.flags}
        self._retained = []
        self._t = 0
        self._done = False
        self._rng = np.random.default_rng(seed)

    def _record_action(self, spec, action):
        if getattr(self, "_done", True):
            raise UsageError("step() called on an environment whose episode is over; call reset() first.")
        beta = clamp_action(action)
        flag = spec.flags[self._t]
        mask = np.zeros(flag.length, dtype=bool)
        mask[self._rng.choice(flag.length, size=retained_count(beta, flag.length), replace=False)] = True
        self._betas[self._t] = beta
        self._masks[flag.id] = mask
        self._retained.append(mask.sum() / flag.length)
        self._t += 1
        return beta

    @property
    def betas(self):
        return list(self._betas)

    @property
    def masks(self):
        """Retain masks of the current episode (all ones for flags not yet pruned)"""
        return MaskSet(self._masks)

    @property
    def num_steps(self):
        return len(self.spec.flags)

    @property
    def arch_id(self):
        return self.spec.arch_id

    @property
    def observation_width(self):
        return self.spec.c_max + DESCRIPTOR_WIDTH


class PruningEnv(_EpisodeState):
    """
    Environment around one (trained network, dataset) pair.

    Args:
        env_id: Name used in records and logs
        net: Trained base network (shared, read-only)
        data: DataSplit used for observations, fine-tuning and evaluation
        reward_cfg: RewardConfig; A_e defaults to the base accuracy
        finetune: TrainConfig of the terminal fine-tune
        obs_mode: "masked" or "base"
        obs_samples: Validation samples used for Taylor observations
        seed: Seed of channel draws and fine-tuning
        base_accuracy: Accuracy of `net` on `data.val`; measured when None
        max_retries: Retries of a diverged terminal fine-tune
    """

    def __init__(self, env_id, net, data, reward_cfg=None, finetune=None, obs_mode="masked",
                 obs_samples=64, seed=0, base_accuracy=None, max_retries=2):
        if obs_mode not in OBSERVATION_MODES:
            raise ConfigurationError(f"Unknown observation mode '{obs_mode}'.", field="obs_mode")
        self.env_id = env_id
        self.net = net
        self.spec = net.spec
        self.data = data
        self.finetune = finetune or TrainConfig(epochs=3)
        self.obs_mode = obs_mode
        self.obs_samples = obs_samples
        self.seed = seed
        self.max_retries = max_retries
        self.base_accuracy = evaluate(net, data.val) if base_accuracy is None else base_accuracy
        self.reward_cfg = (reward_cfg or RewardConfig()).with_accuracy(self.base_accuracy).validate()
        self._obs_batch = data.val.subset(np.arange(min(obs_samples, len(data.val))))
        self._static = layer_descriptors(self.spec)
        self._base_scores = taylor_scores(net, self._obs_batch) if obs_mode == "base" else None
        self._episodes = 0
        self._done = True

    def clone(self):
        """Fresh environment sharing the read-only net, data and cached features"""
        other = object.__new__(PruningEnv)
        other.__dict__.update({k: v for k, v in self.__dict__.items() if not k.startswith("_")
                               or k in ("_obs_batch", "_static", "_base_scores")})
        other._episodes = 0
        other._done = True
        return other

    def _observe(self):
        return build_observation(self.net, self._t, self._betas, self._obs_batch, masks=self._masks,
                                 mode=self.obs_mode, base_scores=self._base_scores, static=self._static)

    def reset(self, seed=None):
        """Start an episode with every beta at 1 and return the observation of the first flag."""
        seed = [self.seed, self._episodes] if seed is None else seed
        self._episodes += 1
        self._begin(self.spec, seed)
        self._seed = seed
        return self._observe()

    def step(self, action, finalize=True):
        """
        Apply retention fraction `action` to the current flag.

        Args:
            action: Raw action; clamped to [BETA_MIN, 1]
            finalize: Run the terminal rebuild, fine-tune and evaluation on the last step

        Returns:
            (observation, reward, done, info); observation is None once done
        """
        self._record_action(self.spec, action)
        if self._t < self.num_steps:
            return self._observe(), 0.0, False, {}

        self._done = True
        masks = MaskSet(self._masks)
        cf, compression = compression_of(masks, self.spec)
        info = {"betas": self.betas, "cf": cf, "compression": compression}
        if not finalize:
            return None, 0.0, True, info

        accuracy = self._evaluate(masks)
        reward = episode_rewards(self.num_steps, accuracy, compression, self.reward_cfg,
                                 self._retained)[-1]
        info["accuracy"] = accuracy
        logger.debug("%s episode: CF=%.3f A=%.4f reward=%.4f", self.env_id, cf, accuracy, reward)
        return None, reward, True, info

    def _evaluate(self, masks):
        seed = int(np.random.SeedSequence([int(s) for s in np.ravel(self._seed)]).generate_state(1)[0])
        pruned = rebuild(self.net, masks, "pretrained", seed)

        def tune(cfg):
            return fit(pruned, self.data, replace(cfg, seed=seed))[0]

        tuned = RetryHandler(self.max_retries).execute(tune, self.finetune)
        return evaluate(tuned, self.data.val)


class SurrogateEnv(_EpisodeState):
    """
    Environment with a closed-form accuracy model.

    Terminal accuracy is A = A_e * g(betas) with
    g = exp(-mean((betas - p*)^2) / (2 * width^2)); the optimum p* is a random
    profile scaled so that its pruned fraction matches C_e. Compression is
    computed exactly from the real spec.
    """

    def __init__(self, spec, reward_cfg=None, seed=0, width=SURROGATE_WIDTH,
                 expected_accuracy=SURROGATE_ACCURACY, env_id=None):
        self.spec = spec
        self.env_id = env_id or f"surrogate-{spec.arch_id}-s{seed}"
        self.seed = seed
        self.width = width
        self.expected_accuracy = expected_accuracy
        self.reward_cfg = (reward_cfg or RewardConfig()).with_accuracy(expected_accuracy).validate()
        self.optimum = self._optimum()
        self._static = layer_descriptors(spec)
        self._episodes = 0
        self._done = True

    def _optimum(self):
        c_e = self.reward_cfg.expected_compression
        target = 1.0 / (1.0 - c_e)
        if target <= 1.0:
            return Profile(self.spec.arch_id, (1.0,) * len(self.spec.flags), {"generator": "surrogate"})
        k = solve_k_for_cf(self.spec, "random", target, strict=False, seed=self.seed)
        profile = family_profile(self.spec, "random", k, self.seed)
        return Profile(self.spec.arch_id, profile.betas, {"generator": "surrogate", "multiplier": k},
                       self.seed)

    def accuracy_of(self, betas):
        """Synthetic accuracy of a full profile"""
        diff = np.asarray(betas, dtype=np.float64) - np.asarray(self.optimum.betas)
        return self.expected_accuracy * math.exp(-np.mean(diff ** 2) / (2 * self.width ** 2))

    def clone(self):
        other = object.__new__(SurrogateEnv)
        other.__dict__.update({k: v for k, v in self.__dict__.items() if not k.startswith("_")
                               or k == "_static"})
        other._episodes = 0
        other._done = True
        return other

    def _observe(self):
        cumulative = 0.0
        if self._t:
            partial = self._betas[:self._t] + [1.0] * (self.num_steps - self._t)
            cumulative = compression_of(Profile(None, partial), self.spec)[1]
        return Observation(np.zeros(self.spec.c_max), _descriptor(self.spec, self._t, cumulative, self._static))

    def reset(self, seed=None):
        seed = [self.seed, self._episodes] if seed is None else seed
        self._episodes += 1
        self._begin(self.spec, seed)
        return self._observe()

    def step(self, action, finalize=True):
        self._record_action(self.spec, action)
        if self._t < self.num_steps:
            return self._observe(), 0.0, False, {}
        self._done = True
        cf, compression = compression_of(Profile(None, self._betas), self.spec)
        accuracy = self.accuracy_of(self._betas)
        info = {"betas": self.betas, "cf": cf, "compression": compression, "accuracy": accuracy}
        if not finalize:
            return None, 0.0, True, info
        reward = episode_rewards(self.num_steps, accuracy, compression, self.reward_cfg,
                                 self._retained)[-1]
        return None, reward, True, info


class CircularEnvQueue:
    """
    Circular queue of environments; every episode runs on a fresh clone of the
    next environment in line.
    """

    def __init__(self, envs):
        envs = list(envs)
        if not envs:
            raise ConfigurationError("The environment queue is empty.", field="envs")
        first = envs[0]
        for env in envs[1:]:
            if env.arch_id != first.arch_id or env.observation_width != first.observation_width:
                raise ArchitectureMismatchError(first.arch_id, env.arch_id)
        self.envs = envs
        self.cursor = 0
        self.draws = 0
        self.current = None

    def __len__(self):
        return len(self.envs)

    @property
    def arch_id(self):
        return self.envs[0].arch_id

    @property
    def observation_width(self):
        return self.envs[0].observation_width

    @property
    def num_steps(self):
        return self.envs[0].num_steps

    @property
    def spec(self):
        return self.envs[0].spec

    def next_env(self):
        """
        Fresh clone of the environment under the cursor; advances the cursor.

        The clone continues the queue's episode count, so an unseeded reset
        on each clone draws a different channel selection.
        """
        env = self.envs[self.cursor].clone()
        env._episodes = self.draws
        self.draws += 1
        self.cursor = (self.cursor + 1) % len(self.envs)
        return env

    def reset(self, seed=None):
        self.current = self.next_env()
        return self.current.reset(seed)

    def step(self, action, finalize=True):
        if self.current is None:
            raise UsageError("step() called before reset() on the environment queue.")
        return self.current.step(action, finalize)
