"""
Proximal policy optimization with generalized advantage estimation.

The policy is a Gaussian over the raw action whose mean comes from an MLP
and whose log standard deviation is a single learned parameter; a second
MLP estimates state values. Both MLPs run on the same Dense/Relu primitives
as the pruned networks. Episodes are collected in parallel, one
environment clone per worker, each with its own seeded random stream.
"""

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from scripts.autodiff import Dense, Relu, Tape, TapeOp, backward, forward
from scripts.profiles import Profile
from scripts.rl_env import CircularEnvQueue, EpisodeRecord, clamp_action
from scripts.trainer import he_normal, load_checkpoint, save_checkpoint
from utils.exceptions import (
    ArchitectureMismatchError,
    CheckpointFormatError,
    ConfigurationError,
    NumericInstabilityError,
)

logger = logging.getLogger(__name__)

LOG_2PI = math.log(2 * math.pi)
CURVE_COLUMNS = ("iteration", "mean_reward", "min_reward", "max_reward", "mean_c", "mean_a")


@dataclass(frozen=True)
class PpoConfig:
    """
    PPO hyper-parameters.

    Attributes:
        clip: Clip ratio epsilon in (0, 1)
        gae_lambda: GAE lambda in [0, 1]
        gamma: Discount in [0, 1]
        epochs: Update epochs per iteration
        minibatch_size: Steps per gradient step
        hidden: Widths of the hidden layers of both MLPs
        init_std: Initial action standard deviation
        std_floor: Lower bound of the action standard deviation
        initial_mean: Initial action mean (bias of the policy output)
        lr: Adam learning rate
        value_coef: Weight of the value regression loss
        iterations: Policy updates
        episodes_per_iteration: Episodes collected per update
        workers: Threads collecting episodes
        seed: Seed of initialization, sampling and minibatch order
    """

    clip: float = 0.2
    gae_lambda: float = 0.95
    gamma: float = 1.0
    epochs: int = 4
    minibatch_size: int = 64
    hidden: tuple = (64, 64)
    init_std: float = 0.3
    std_floor: float = 0.02
    initial_mean: float = 0.6
    lr: float = 3e-3
    value_coef: float = 0.5
    iterations: int = 200
    episodes_per_iteration: int = 16
    workers: int = 4
    seed: int = 0

    def validate(self):
        if not 0 < self.clip < 1:
            raise ConfigurationError("clip must lie in (0, 1).", field="clip")
        if not 0 <= self.gae_lambda <= 1 or not 0 <= self.gamma <= 1:
            raise ConfigurationError("gae_lambda and gamma must lie in [0, 1].", field="gae_lambda")
        if self.lr < 0:
            raise ConfigurationError("lr cannot be negative.", field="lr")
        if self.init_std <= 0 or self.std_floor <= 0:
            raise ConfigurationError("Action standard deviations must be positive.", field="init_std")
        for name in ("epochs", "minibatch_size", "iterations", "episodes_per_iteration", "workers"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be at least 1.", field=name)
        return self

    def to_dict(self):
        data = dict(vars(self))
        data["hidden"] = list(self.hidden)
        return data

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        if "hidden" in data:
            data["hidden"] = tuple(data["hidden"])
        return cls(**data)


def mlp_tape(prefix, input_width, hidden, output_width=1):
    """Tape of a Dense/Relu MLP whose output activation is named `{prefix}_out`."""
    ops, shapes = [], {}
    previous, width = "input", input_width
    for index, units in enumerate(hidden):
        dense, relu = f"{prefix}_fc{index}", f"{prefix}_relu{index}"
        ops.append(TapeOp(dense, Dense, (previous,), (f"{dense}.weight", f"{dense}.bias")))
        ops.append(TapeOp(relu, Relu, (dense,)))
        shapes[f"{dense}.weight"], shapes[f"{dense}.bias"] = (width, units), (units,)
        previous, width = relu, units
    out = f"{prefix}_out"
    ops.append(TapeOp(out, Dense, (previous,), (f"{out}.weight", f"{out}.bias")))
    shapes[f"{out}.weight"], shapes[f"{out}.bias"] = (width, output_width), (output_width,)
    return Tape(ops, (input_width,), shapes, out)


class GaussianPolicy:
    """
    Actor-critic parameters plus the architecture the policy was trained for.

    `params` holds the policy MLP ("pi_*"), the value MLP ("v_*") and the
    scalar "log_std". Instances are treated as immutable snapshots: updates
    build new parameter dicts.
    """

    def __init__(self, arch, obs_width, hidden, params, std_floor=0.02):
        self.arch = arch
        self.obs_width = obs_width
        self.hidden = tuple(hidden)
        self.params = params
        self.std_floor = std_floor

    @classmethod
    def initialize(cls, arch, obs_width, cfg):
        rng = np.random.default_rng([cfg.seed, 0])
        params = {}
        for prefix in ("pi", "v"):
            for name, shape in mlp_tape(prefix, obs_width, cfg.hidden).param_shapes.items():
                if name.endswith(".weight"):
                    params[name] = he_normal(shape, rng, np.float64)
                else:
                    params[name] = np.zeros(shape)
        # near-constant initial mean
        params["pi_out.weight"] = params["pi_out.weight"] * 0.01
        params["pi_out.bias"] = np.full(1, cfg.initial_mean)
        params["log_std"] = np.full(1, math.log(cfg.init_std))
        return cls(arch, obs_width, cfg.hidden, params, cfg.std_floor)

    @property
    def std(self):
        return float(np.exp(self.params["log_std"][0]))

    def with_params(self, params):
        return GaussianPolicy(self.arch, self.obs_width, self.hidden, params, self.std_floor)

    def _run(self, prefix, obs):
        tape = mlp_tape(prefix, self.obs_width, self.hidden)
        _, acts = forward(tape, self.params, (obs, None))
        return tape, acts[tape.output][:, 0]

    def mean(self, obs):
        return self._run("pi", np.atleast_2d(obs))[1]

    def value(self, obs):
        return self._run("v", np.atleast_2d(obs))[1]

    def log_prob(self, actions, means):
        log_std = self.params["log_std"][0]
        z = (actions - means) / math.exp(log_std)
        return -0.5 * z ** 2 - log_std - 0.5 * LOG_2PI

    def act(self, obs, rng, deterministic=False):
        """
        Returns:
            (raw action, log-probability, value estimate)
        """
        obs = np.atleast_2d(obs)
        mean = float(self.mean(obs)[0])
        value = float(self.value(obs)[0])
        action = mean if deterministic else mean + self.std * float(rng.standard_normal())
        return action, float(self.log_prob(np.array([action]), np.array([mean]))[0]), value

    def to_tensors(self):
        return dict(self.params)

    def metadata(self):
        return {"kind": "policy", "arch": self.arch, "obs_width": self.obs_width,
                "hidden": list(self.hidden), "std_floor": self.std_floor}


class Adam:
    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, params, grads):
        self.t += 1
        updated = dict(params)
        for name, grad in grads.items():
            m = self.beta1 * self.m.get(name, 0.0) + (1 - self.beta1) * grad
            v = self.beta2 * self.v.get(name, 0.0) + (1 - self.beta2) * grad ** 2
            self.m[name], self.v[name] = m, v
            m_hat = m / (1 - self.beta1 ** self.t)
            v_hat = v / (1 - self.beta2 ** self.t)
            updated[name] = params[name] - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        return updated


def compute_gae(rewards, values, gamma, lam):
    """
    Generalized advantage estimates of one terminated episode.

    Returns:
        (advantages, returns) with returns = advantages + values
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    advantages = np.zeros_like(rewards)
    running = 0.0
    for t in reversed(range(len(rewards))):
        next_value = values[t + 1] if t + 1 < len(values) else 0.0
        delta = rewards[t] + gamma * next_value - values[t]
        running = delta + gamma * lam * running
        advantages[t] = running
    return advantages, advantages + values


def run_episode(policy, env, rng, deterministic=False, finalize=True, env_seed=None):
    """Roll one episode of `policy` in `env`, resetting it with `env_seed` when given."""
    record = EpisodeRecord(env.env_id)
    obs = env.reset(env_seed)
    done = False
    info = {}
    while not done:
        vector = obs.vector
        action, log_prob, value = policy.act(vector, rng, deterministic)
        obs, reward, done, info = env.step(action, finalize=finalize)
        record.observations.append(vector)
        record.actions.append(action)
        record.betas.append(clamp_action(action))
        record.log_probs.append(log_prob)
        record.values.append(value)
        record.rewards.append(float(reward))
    record.accuracy = info.get("accuracy")
    record.compression = info.get("compression")
    return record


def collect_episodes(queue, policy, count, seed, iteration, workers=1):
    """
    Collect `count` episodes, each on a fresh clone of the next queued environment.

    Episode i runs with the random stream (seed, iteration, i) for both the
    policy and the environment reset. Channel draws and fine-tune seeds then
    differ per episode, and the result is the same for any number of workers.
    """
    envs = [queue.next_env() for _ in range(count)]
    rngs = [np.random.default_rng([seed, iteration, i]) for i in range(count)]

    def job(i):
        stream = [seed, iteration, i]
        record = run_episode(policy, envs[i], rngs[i], env_seed=stream)
        record.seed = stream
        return record

    if workers > 1 and count > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(job, range(count)))
    return [job(i) for i in range(count)]


def _gradients(policy, obs, actions, old_log_probs, advantages, returns, cfg):
    """Losses and parameter gradients of the clipped surrogate plus value regression."""
    m = len(actions)
    pi_tape, means = policy._run("pi", obs)
    log_std = policy.params["log_std"][0]
    std = math.exp(log_std)
    z = (actions - means) / std
    log_probs = -0.5 * z ** 2 - log_std - 0.5 * LOG_2PI
    ratio = np.exp(log_probs - old_log_probs)
    clipped = np.clip(ratio, 1 - cfg.clip, 1 + cfg.clip)
    policy_loss = -np.mean(np.minimum(ratio * advantages, clipped * advantages))

    # gradient flows only where the unclipped term is the minimum
    active = ratio * advantages <= clipped * advantages
    d_log_prob = np.where(active, -advantages * ratio / m, 0.0)
    d_mean = d_log_prob * z / std
    d_log_std = float(np.sum(d_log_prob * (z ** 2 - 1.0)))
    pi_grads, _ = backward(pi_tape, seed=d_mean[:, None], wrt=pi_tape.output)

    v_tape, values = policy._run("v", obs)
    value_loss = 0.5 * np.mean((values - returns) ** 2)
    d_values = cfg.value_coef * (values - returns) / m
    v_grads, _ = backward(v_tape, seed=d_values[:, None], wrt=v_tape.output)

    grads = {**pi_grads, **v_grads, "log_std": np.array([d_log_std])}
    return float(policy_loss), float(value_loss), grads


def ppo_update(policy, optimizer, episodes, cfg, rng, iteration=0):
    """
    PPO epochs over one batch of episodes.

    Returns:
        (policy, diagnostics)

    Raises:
        NumericInstabilityError: a loss or gradient is not finite
    """
    obs, actions, old_log_probs, advantages, returns = [], [], [], [], []
    for record in episodes:
        adv, ret = compute_gae(record.rewards, record.values, cfg.gamma, cfg.gae_lambda)
        obs += record.observations
        actions += record.actions
        old_log_probs += record.log_probs
        advantages.append(adv)
        returns.append(ret)
    obs = np.asarray(obs, dtype=np.float64)
    actions = np.asarray(actions, dtype=np.float64)
    old_log_probs = np.asarray(old_log_probs, dtype=np.float64)
    advantages = np.concatenate(advantages)
    returns = np.concatenate(returns)
    if len(advantages) > 1 and advantages.std() > 0:
        advantages = (advantages - advantages.mean()) / advantages.std()

    floor = math.log(cfg.std_floor)
    losses = []
    for _ in range(cfg.epochs):
        order = rng.permutation(len(actions))
        for start in range(0, len(order), cfg.minibatch_size):
            index = order[start:start + cfg.minibatch_size]
            policy_loss, value_loss, grads = _gradients(
                policy, obs[index], actions[index], old_log_probs[index],
                advantages[index], returns[index], cfg,
            )
            finite = math.isfinite(policy_loss) and math.isfinite(value_loss) and all(
                np.all(np.isfinite(g)) for g in grads.values()
            )
            if not finite:
                raise NumericInstabilityError(
                    "PPO update", message="PPO losses or gradients diverged.",
                    diagnostics={"iteration": iteration, "policy_loss": policy_loss,
                                 "value_loss": value_loss},
                )
            params = optimizer.step(policy.params, grads)
            params["log_std"] = np.maximum(params["log_std"], floor)
            policy = policy.with_params(params)
            losses.append((policy_loss, value_loss))

    diagnostics = {
        "policy_loss": float(np.mean([l[0] for l in losses])),
        "value_loss": float(np.mean([l[1] for l in losses])),
        "std": policy.std,
    }
    return policy, diagnostics


def curve_row(iteration, episodes):
    rewards = [e.total_reward for e in episodes]
    return {
        "iteration": iteration,
        "mean_reward": float(np.mean(rewards)),
        "min_reward": float(np.min(rewards)),
        "max_reward": float(np.max(rewards)),
        "mean_c": float(np.mean([e.compression for e in episodes])),
        "mean_a": float(np.mean([e.accuracy for e in episodes])),
    }


def ppo_train(source, cfg, on_iteration=None):
    """
    Train a policy on an environment queue (or a single environment).

    Args:
        source: CircularEnvQueue, or one environment (wrapped in a queue)
        cfg: PpoConfig
        on_iteration: Optional callback(iteration, episodes, row) for persistence

    Returns:
        (policy, curve): trained GaussianPolicy and one curve row per iteration
    """
    cfg.validate()
    queue = source if isinstance(source, CircularEnvQueue) else CircularEnvQueue([source])
    policy = GaussianPolicy.initialize(queue.arch_id, queue.observation_width, cfg)
    optimizer = Adam(cfg.lr)
    rng = np.random.default_rng([cfg.seed, 1])
    curve = []

    for iteration in range(cfg.iterations):
        episodes = collect_episodes(queue, policy, cfg.episodes_per_iteration, cfg.seed,
                                    iteration, cfg.workers)
        row = curve_row(iteration, episodes)
        curve.append(row)
        if on_iteration is not None:
            on_iteration(iteration, episodes, row)
        policy, diagnostics = ppo_update(policy, optimizer, episodes, cfg, rng, iteration)
        logger.info("iteration %d: reward %.4f [%.4f, %.4f] C=%.3f std=%.3f",
                    iteration, row["mean_reward"], row["min_reward"], row["max_reward"],
                    row["mean_c"], diagnostics["std"])
    return policy, curve


def write_curve(curve, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=CURVE_COLUMNS)
        writer.writeheader()
        for row in curve:
            writer.writerow({k: repr(row[k]) if isinstance(row[k], float) else row[k] for k in CURVE_COLUMNS})
    return path


def save_policy(path, policy, ppo_cfg=None):
    metadata = policy.metadata()
    if ppo_cfg is not None:
        metadata["ppo"] = ppo_cfg.to_dict()
    return save_checkpoint(path, policy.to_tensors(), metadata)


def load_policy(path):
    tensors, metadata = load_checkpoint(path)
    if metadata.get("kind") != "policy":
        raise CheckpointFormatError(path, f"Checkpoint '{path}' does not hold a policy.")
    return GaussianPolicy(metadata["arch"], metadata["obs_width"], tuple(metadata["hidden"]),
                          tensors, metadata.get("std_floor", 0.02))


def rollout_profile(policy, env, deterministic=True, seed=0, checkpoint_id=None):
    """
    Profile produced by one rollout of `policy`.

    Args:
        policy: GaussianPolicy
        env: Environment (or queue) of the policy's architecture
        deterministic: Use the action mean instead of sampling
        seed: Seed of sampled actions and channel draws
        checkpoint_id: Reference stored in the provenance

    Raises:
        ArchitectureMismatchError: env architecture differs from the policy's
    """
    if env.arch_id != policy.arch or env.observation_width != policy.obs_width:
        raise ArchitectureMismatchError(policy.arch, env.arch_id)
    if isinstance(env, CircularEnvQueue):
        env = env.next_env()
    else:
        env = env.clone()
    env.seed = seed
    record = run_episode(policy, env, np.random.default_rng([seed, 3]), deterministic, finalize=False)
    provenance = {"generator": "rl-policy", "checkpoint": checkpoint_id, "deterministic": deterministic}
    return Profile(policy.arch, tuple(record.betas), provenance, seed)
