import math

import numpy as np
import pytest

from scripts.profiles import BETA_MIN, compression_of
from scripts.ppo import (
    GaussianPolicy,
    PpoConfig,
    _gradients,
    collect_episodes,
    compute_gae,
    load_policy,
    ppo_train,
    rollout_profile,
    save_policy,
    write_curve,
)
from scripts.rewards import RewardConfig, gaussian_reward
from scripts.rl_env import (
    DESCRIPTOR_WIDTH,
    CircularEnvQueue,
    PruningEnv,
    SurrogateEnv,
    clamp_action,
    layer_descriptors,
)
from scripts.trainer import TrainConfig
from utils.exceptions import ArchitectureMismatchError, CheckpointFormatError, ConfigurationError, UsageError

SMALL_PPO = PpoConfig(iterations=3, episodes_per_iteration=4, minibatch_size=8, hidden=(16, 16), workers=1)
# near-deterministic actions: episodes differ only in their channel draws
STEADY_PPO = PpoConfig(iterations=1, episodes_per_iteration=2, hidden=(16, 16), init_std=1e-6, workers=1)


def same_channels(a, b):
    return all(np.array_equal(a[fid], b[fid]) for fid in a)


def track_clones(queue):
    """Record every environment clone the queue hands out."""
    clones = []
    next_env = queue.next_env

    def tracked():
        env = next_env()
        clones.append(env)
        return env

    queue.next_env = tracked
    return clones


def test_clamp_action():
    assert clamp_action(-5.0) == BETA_MIN
    assert clamp_action(7.0) == 1.0
    assert clamp_action(0.42) == 0.42


def test_surrogate_episode(cnet_spec):
    env = SurrogateEnv(cnet_spec, seed=1)
    obs = env.reset()
    assert obs.width == cnet_spec.c_max + DESCRIPTOR_WIDTH == env.observation_width
    assert obs.descriptor[0] == 0.0 and obs.descriptor[-1] == 1.0
    for t in range(5):
        obs, reward, done, _ = env.step(0.5)
        assert reward == 0.0 and not done
        assert obs.descriptor[0] == pytest.approx((t + 1) / 6)
    assert obs.descriptor[5] > 0
    obs, reward, done, info = env.step(0.5)
    assert done and obs is None
    assert info["cf"] == pytest.approx(3132 / 848)
    with pytest.raises(UsageError):
        env.step(0.5)


def test_surrogate_reward_of_unpruned_profile(cnet_spec):
    env = SurrogateEnv(cnet_spec, RewardConfig("gaussian", expected_compression=0.5, sigma=0.3))
    env.reset()
    for _ in range(6):
        _, reward, _, info = env.step(1.0)
    assert info["compression"] == 0.0
    expected = env.accuracy_of([1.0] * 6) / 0.9 * math.exp(-0.25 / (2 * 0.09))
    assert reward == pytest.approx(expected)


def test_surrogate_optimum(cnet_spec):
    env = SurrogateEnv(cnet_spec, RewardConfig(expected_compression=0.5), seed=3)
    _, c = compression_of(env.optimum, cnet_spec)
    assert abs(c - 0.5) < 0.1
    assert env.accuracy_of(env.optimum.betas) == 0.9


def test_step_before_reset(cnet_spec):
    with pytest.raises(UsageError):
        SurrogateEnv(cnet_spec).step(0.5)
    with pytest.raises(UsageError):
        CircularEnvQueue([SurrogateEnv(cnet_spec)]).step(0.5)


def test_queue_cycles_environments(cnet_spec):
    envs = [SurrogateEnv(cnet_spec, seed=s) for s in (0, 1, 2)]
    queue = CircularEnvQueue(envs)
    ids = [queue.next_env().env_id for _ in range(5)]
    assert ids == [envs[0].env_id, envs[1].env_id, envs[2].env_id, envs[0].env_id, envs[1].env_id]


def test_queue_rejects_mixed_architectures(cnet_spec, resnet_spec):
    with pytest.raises(ArchitectureMismatchError):
        CircularEnvQueue([SurrogateEnv(cnet_spec), SurrogateEnv(resnet_spec)])
    with pytest.raises(ConfigurationError):
        CircularEnvQueue([])


def test_clones_do_not_share_episodes(cnet_spec):
    env = SurrogateEnv(cnet_spec)
    a, b = env.clone(), env.clone()
    a.reset()
    a.step(0.3)
    b.reset()
    assert b.betas == [1.0] * 6
    assert a.betas[0] == 0.3


def test_queue_clones_draw_distinct_channels(cnet_spec):
    queue = CircularEnvQueue([SurrogateEnv(cnet_spec, seed=0)])
    masks = []
    for _ in range(3):
        env = queue.next_env()
        env.reset()
        for _ in range(6):
            env.step(0.5, finalize=False)
        masks.append(env.masks)
    assert all(count == 4 for m in masks for count in m.counts.values())
    assert not same_channels(masks[0], masks[1])
    assert not same_channels(masks[0], masks[2])
    assert not same_channels(masks[1], masks[2])


def test_collected_episodes_draw_distinct_channels(cnet_spec):
    queue = CircularEnvQueue([SurrogateEnv(cnet_spec, seed=0)])
    clones = track_clones(queue)
    policy = GaussianPolicy.initialize(cnet_spec.arch_id, queue.observation_width, STEADY_PPO)
    records = collect_episodes(queue, policy, 3, seed=5, iteration=0)
    assert [r.seed for r in records] == [[5, 0, 0], [5, 0, 1], [5, 0, 2]]
    assert not same_channels(clones[0].masks, clones[1].masks)
    assert not same_channels(clones[1].masks, clones[2].masks)


def test_layer_descriptors_are_normalized(cnet_spec, resnet_spec):
    for spec in (cnet_spec, resnet_spec):
        rows = np.array(layer_descriptors(spec))
        assert rows.shape == (len(spec.flags), 4)
        assert rows[:, 1].max() == 1.0
        for column in (0, 1, 3):
            assert np.all((rows[:, column] > 0) & (rows[:, column] <= 1))
        assert rows[:, 3].sum() == pytest.approx(1.0)


def test_pruning_env_episode(trained_cnet, data):
    env = PruningEnv("cnet-desk", trained_cnet, data, finetune=TrainConfig(epochs=1, lr=0.01),
                     obs_samples=16, seed=2)
    obs = env.reset()
    assert obs.width == env.observation_width
    assert np.all(obs.features >= 0)
    for _ in range(5):
        obs, reward, done, _ = env.step(0.5)
    _, reward, done, info = env.step(0.5)
    assert done
    assert 0.0 <= info["accuracy"] <= 1.0
    assert info["cf"] == pytest.approx(3132 / 848)
    assert math.isfinite(reward)


def test_pruning_env_base_observations(trained_cnet, data):
    env = PruningEnv("cnet-desk", trained_cnet, data, obs_mode="base", obs_samples=16,
                     base_accuracy=0.8)
    first = env.reset()
    again = env.clone().reset()
    np.testing.assert_allclose(first.features, again.features)
    assert env.reward_cfg.expected_accuracy == 0.8
    for _ in range(6):
        _, reward, done, info = env.step(0.5, finalize=False)
    assert done and reward == 0.0 and "accuracy" not in info


def test_pruning_env_collection_draws_fresh_channels(trained_cnet, data):
    env = PruningEnv("cnet-desk", trained_cnet, data, finetune=TrainConfig(epochs=1, lr=0.01),
                     obs_samples=16, seed=2)
    policy = GaussianPolicy.initialize(env.arch_id, env.observation_width, STEADY_PPO)

    def collect(iteration, workers):
        queue = CircularEnvQueue([env])
        clones = track_clones(queue)
        records = collect_episodes(queue, policy, 2, seed=5, iteration=iteration, workers=workers)
        return records, [clone.masks for clone in clones]

    serial, serial_masks = collect(0, 1)
    parallel, parallel_masks = collect(0, 2)
    later, later_masks = collect(1, 1)

    assert [r.to_dict() for r in serial] == [r.to_dict() for r in parallel]
    assert all(same_channels(a, b) for a, b in zip(serial_masks, parallel_masks))
    assert not same_channels(serial_masks[0], serial_masks[1])
    assert not same_channels(serial_masks[0], later_masks[0])
    assert not same_channels(serial_masks[1], later_masks[1])
    assert all(0.0 <= r.accuracy <= 1.0 for r in serial + later)


def test_pruning_env_rejects_unknown_mode(trained_cnet, data):
    with pytest.raises(ConfigurationError):
        PruningEnv("x", trained_cnet, data, obs_mode="oracle", base_accuracy=0.5)


def test_gae_monte_carlo_returns():
    advantages, returns = compute_gae([0.0, 0.0, 1.0], [0.0, 0.0, 0.0], gamma=1.0, lam=1.0)
    assert advantages.tolist() == [1.0, 1.0, 1.0]
    assert returns.tolist() == [1.0, 1.0, 1.0]


def test_gae_one_step_bootstrap():
    values = [0.2, 0.5, 0.1]
    advantages, returns = compute_gae([0.0, 0.0, 1.0], values, gamma=1.0, lam=0.0)
    np.testing.assert_allclose(advantages, [0.3, -0.4, 0.9])
    np.testing.assert_allclose(returns, [0.5, 0.1, 1.0])


def test_initial_policy_mean():
    policy = GaussianPolicy.initialize("cnet-8", 15, SMALL_PPO)
    assert policy.mean(np.zeros(15))[0] == pytest.approx(0.6)
    assert policy.std == pytest.approx(0.3)


def test_log_prob():
    policy = GaussianPolicy.initialize("cnet-8", 15, SMALL_PPO)
    value = policy.log_prob(np.array([0.9]), np.array([0.6]))[0]
    expected = -0.5 * (0.3 / 0.3) ** 2 - math.log(0.3) - 0.5 * math.log(2 * math.pi)
    assert value == pytest.approx(expected)


def test_ppo_gradients_match_finite_differences():
    rng = np.random.default_rng(0)
    cfg = SMALL_PPO
    policy = GaussianPolicy.initialize("cnet-8", 15, cfg)
    obs = rng.standard_normal((10, 15))
    means = policy.mean(obs)
    actions = means + 0.3 * rng.standard_normal(10)
    old_log_probs = policy.log_prob(actions, means)
    advantages = rng.standard_normal(10)
    returns = rng.standard_normal(10)

    def objective(p):
        policy_loss, value_loss, _ = _gradients(p, obs, actions, old_log_probs, advantages, returns, cfg)
        return policy_loss + cfg.value_coef * value_loss

    _, _, grads = _gradients(policy, obs, actions, old_log_probs, advantages, returns, cfg)
    step = 1e-6
    for name in ("pi_out.weight", "pi_fc0.weight", "pi_out.bias", "log_std", "v_out.weight", "v_fc1.bias"):
        flat_size = policy.params[name].size
        for index in rng.choice(flat_size, size=min(3, flat_size), replace=False):
            shifted = []
            for sign in (1, -1):
                params = {k: v.copy() for k, v in policy.params.items()}
                params[name].reshape(-1)[index] += sign * step
                shifted.append(objective(policy.with_params(params)))
            numeric = (shifted[0] - shifted[1]) / (2 * step)
            assert grads[name].reshape(-1)[index] == pytest.approx(numeric, rel=1e-4, abs=1e-7)


def test_collection_is_worker_independent(cnet_spec):
    policy = GaussianPolicy.initialize(cnet_spec.arch_id, cnet_spec.c_max + DESCRIPTOR_WIDTH, SMALL_PPO)
    queue_a = CircularEnvQueue([SurrogateEnv(cnet_spec, seed=0), SurrogateEnv(cnet_spec, seed=1)])
    queue_b = CircularEnvQueue([SurrogateEnv(cnet_spec, seed=0), SurrogateEnv(cnet_spec, seed=1)])
    serial = collect_episodes(queue_a, policy, 6, seed=5, iteration=0, workers=1)
    parallel = collect_episodes(queue_b, policy, 6, seed=5, iteration=0, workers=3)
    assert [e.to_dict() for e in serial] == [e.to_dict() for e in parallel]
    assert [e.env_id for e in serial][:2] == [queue_a.envs[0].env_id, queue_a.envs[1].env_id]


def test_ppo_train_is_deterministic(cnet_spec):
    rows = []
    _, curve_a = ppo_train(SurrogateEnv(cnet_spec), SMALL_PPO,
                           on_iteration=lambda i, episodes, row: rows.append((i, len(episodes))))
    _, curve_b = ppo_train(SurrogateEnv(cnet_spec), SMALL_PPO)
    assert curve_a == curve_b
    assert [r["iteration"] for r in curve_a] == [0, 1, 2]
    assert rows == [(0, 4), (1, 4), (2, 4)]


def test_policy_checkpoint_round_trip(tmp_path, cnet_spec):
    policy, curve = ppo_train(SurrogateEnv(cnet_spec), SMALL_PPO)
    path = save_policy(tmp_path / "policy.ckpt", policy, SMALL_PPO)
    loaded = load_policy(path)
    obs = np.random.default_rng(0).standard_normal((3, policy.obs_width))
    np.testing.assert_array_equal(loaded.mean(obs), policy.mean(obs))
    assert loaded.arch == cnet_spec.arch_id
    lines = write_curve(curve, tmp_path / "curve.csv").read_text().splitlines()
    assert lines[0] == "iteration,mean_reward,min_reward,max_reward,mean_c,mean_a"
    assert len(lines) == 4


def test_load_policy_rejects_network_checkpoint(tmp_path, trained_cnet):
    from scripts.trainer import save_net

    with pytest.raises(CheckpointFormatError):
        load_policy(save_net(tmp_path / "net.ckpt", trained_cnet))


def test_rollout_profile(cnet_spec, resnet_spec):
    policy = GaussianPolicy.initialize(cnet_spec.arch_id, cnet_spec.c_max + DESCRIPTOR_WIDTH, SMALL_PPO)
    profile = rollout_profile(policy, SurrogateEnv(cnet_spec), checkpoint_id="p.ckpt")
    assert profile.arch == cnet_spec.arch_id
    assert len(profile) == 6
    assert profile.provenance["generator"] == "rl-policy"
    assert profile == rollout_profile(policy, SurrogateEnv(cnet_spec), checkpoint_id="p.ckpt")
    with pytest.raises(ArchitectureMismatchError):
        rollout_profile(policy, SurrogateEnv(resnet_spec))


@pytest.mark.parametrize("changes", [{"clip": 0.0}, {"gamma": 1.5}, {"workers": 0}, {"init_std": 0.0}])
def test_ppo_config_validation(changes):
    with pytest.raises(ConfigurationError):
        PpoConfig(**changes).validate()


@pytest.mark.slow
@pytest.mark.parametrize("c_e", [0.5, 0.75])
def test_ppo_reaches_surrogate_optimum(cnet_spec, c_e):
    reward_cfg = RewardConfig("gaussian", expected_compression=c_e, sigma=0.3)
    env = SurrogateEnv(cnet_spec, reward_cfg, seed=0)
    cfg = PpoConfig(iterations=200, episodes_per_iteration=32, minibatch_size=64, workers=1)
    policy, curve = ppo_train(env, cfg)
    assert len(curve) == 200

    _, optimum_c = compression_of(env.optimum, cnet_spec)
    best = gaussian_reward(env.accuracy_of(env.optimum.betas), optimum_c, env.reward_cfg)
    profile = rollout_profile(policy, env)
    _, c = compression_of(profile, cnet_spec)
    reward = gaussian_reward(env.accuracy_of(profile.betas), c, env.reward_cfg)
    assert reward >= 0.95 * best
    assert abs(c - c_e) <= reward_cfg.sigma
