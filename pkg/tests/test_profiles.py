import json

import numpy as np
import pytest

from scripts.netzoo import build_cnet, param_count
from scripts.profiles import (
    BETA_MIN,
    MaskSet,
    Profile,
    compression_of,
    equally_distributed,
    family_profile,
    materialize,
    ramp,
    random_profile,
    retained_count,
    solve_k_for_cf,
)
from utils.exceptions import (
    ArchitectureMismatchError,
    ConfigurationError,
    InfeasibleTargetError,
    MaskLengthError,
)


@pytest.mark.parametrize("beta, length, expected", [
    (0.1, 8, 1),
    (0.3125, 8, 3),
    (0.5, 8, 4),
    (1.0, 8, 8),
    (0.01 + BETA_MIN, 2, 1),
])
def test_retained_count(beta, length, expected):
    assert retained_count(beta, length) == expected


def test_equally_distributed():
    profile = equally_distributed(6, 0.5, "cnet-8")
    assert profile.betas == (0.5,) * 6
    assert profile.provenance["generator"] == "equal"


def test_ramps():
    assert ramp(4, 1.0).betas == (0.25, 0.5, 0.75, 1.0)
    assert ramp(4, 1.0, "decreasing").betas == (1.0, 0.75, 0.5, 0.25)
    assert ramp(10, 0.5).betas[0] == BETA_MIN


def test_ramp_rejects_bad_slope():
    with pytest.raises(ConfigurationError):
        ramp(4, 0.0)
    with pytest.raises(ConfigurationError):
        ramp(4, 0.5, "sideways")


def test_random_profile_is_seeded():
    a = random_profile(13, seed=4)
    b = random_profile(13, seed=4)
    assert a.betas == b.betas
    assert a.betas != random_profile(13, seed=5).betas
    assert all(0.3 <= beta <= 0.9 for beta in a.betas)


def test_random_profile_bounds():
    with pytest.raises(ConfigurationError):
        random_profile(6, lo=0.05, hi=0.9)
    with pytest.raises(ConfigurationError):
        random_profile(6, lo=0.8, hi=0.5)


def test_profile_rejects_out_of_range_beta():
    with pytest.raises(ConfigurationError):
        Profile("cnet-8", (0.5, 0.05))
    with pytest.raises(ConfigurationError):
        Profile("cnet-8", (1.2,))


def test_profile_checks_architecture(cnet_spec, resnet_spec):
    with pytest.raises(ArchitectureMismatchError):
        equally_distributed(6, 0.5, "cnet-8").check(resnet_spec)
    with pytest.raises(ConfigurationError):
        equally_distributed(5, 0.5, "cnet-8").check(cnet_spec)


def test_profile_file_round_trip(tmp_path):
    profile = random_profile(6, seed=[3, 1], arch="cnet-8")
    path = profile.save(tmp_path / "nested" / "p.json")
    assert json.loads(path.read_text())["arch"] == "cnet-8"
    assert Profile.load(path) == profile


def test_missing_profile_file(tmp_path):
    with pytest.raises(ConfigurationError):
        Profile.load(tmp_path / "absent.json")


def test_exact_materialization(cnet_spec):
    profile = random_profile(6, seed=2, arch=cnet_spec.arch_id)
    masks = materialize(profile, cnet_spec, np.random.default_rng(0))
    for f, beta in zip(cnet_spec.flags, profile.betas):
        assert masks.counts[f.id] == retained_count(beta, f.length)
    again = materialize(profile, cnet_spec, np.random.default_rng(0))
    assert all(np.array_equal(masks[f], again[f]) for f in masks)


def test_bernoulli_materialization_keeps_a_channel(cnet_spec):
    profile = equally_distributed(6, BETA_MIN, cnet_spec.arch_id)
    for seed in range(20):
        masks = materialize(profile, cnet_spec, np.random.default_rng(seed), mode="bernoulli")
        assert all(count >= 1 for count in masks.counts.values())


def test_mask_set_is_immutable(cnet_spec):
    masks = MaskSet.all_ones(cnet_spec)
    with pytest.raises(ValueError):
        masks["alpha0"][0] = False


def test_mask_set_rejects_empty_flag():
    with pytest.raises(MaskLengthError):
        MaskSet({"alpha0": np.zeros(4, dtype=bool)})


def test_compression_of_unpruned(cnet_spec):
    assert compression_of(MaskSet.all_ones(cnet_spec), cnet_spec) == (1.0, 0.0)
    assert compression_of(equally_distributed(6, 1.0), cnet_spec) == (1.0, 0.0)


def test_compression_identity(cnet_spec):
    for seed in range(20):
        cf, c = compression_of(random_profile(6, lo=0.1, hi=1.0, seed=seed), cnet_spec)
        assert cf == pytest.approx(1.0 / (1.0 - c), rel=1e-12)


def test_compression_of_masks_matches_param_count(cnet_spec):
    masks = materialize(random_profile(6, seed=9), cnet_spec, np.random.default_rng(1))
    cf, _ = compression_of(masks, cnet_spec)
    assert cf == param_count(cnet_spec) / param_count(cnet_spec, masks)


def test_equal_family_steps_on_small_cnet(cnet_spec):
    assert compression_of(equally_distributed(6, 0.5), cnet_spec)[0] == pytest.approx(3132 / 848)
    assert compression_of(equally_distributed(6, 0.375), cnet_spec)[0] == pytest.approx(3132 / 502)


def test_solver_hits_target():
    spec = build_cnet(32)
    k = solve_k_for_cf(spec, "equal", 4.0)
    cf, _ = compression_of(family_profile(spec, "equal", k), spec)
    assert 3.92 <= cf <= 4.08


@pytest.mark.parametrize("family", ["increasing", "decreasing", "random"])
def test_solver_other_families(family):
    spec = build_cnet(32)
    param = solve_k_for_cf(spec, family, 3.0, strict=False, seed=3)
    cf, _ = compression_of(family_profile(spec, family, param, seed=3), spec)
    assert abs(cf - 3.0) / 3.0 < 0.1


def test_solver_strict_gap(cnet_spec):
    with pytest.raises(InfeasibleTargetError):
        solve_k_for_cf(cnet_spec, "equal", 4.0)


def test_solver_non_strict_returns_closest(cnet_spec):
    k = solve_k_for_cf(cnet_spec, "equal", 4.0, strict=False)
    assert compression_of(family_profile(cnet_spec, "equal", k), cnet_spec)[0] == pytest.approx(3132 / 848)


def test_solver_infeasible_target(cnet_spec):
    with pytest.raises(InfeasibleTargetError) as exc:
        solve_k_for_cf(cnet_spec, "equal", 1e6)
    low, high = exc.value.achievable
    assert low == pytest.approx(1.0)
    assert high == pytest.approx(3132 / 80)


def test_unknown_family(cnet_spec):
    with pytest.raises(ConfigurationError):
        family_profile(cnet_spec, "zigzag", 0.5)
