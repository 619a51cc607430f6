import json
from pathlib import Path

import pytest

from scripts.experiments import (
    ExperimentConfig,
    ResultRow,
    RunDirectory,
    cell_seed,
    load_experiment_config,
    read_results,
    run_experiment,
    run_sweep_pipeline,
    run_random_search,
    run_rl_train,
    run_transfer_eval,
    select_top_profiles,
    sweep_job_settings,
    window_percentile,
)
from scripts.profiles import Profile, compression_of, equally_distributed
from scripts.netzoo import build_cnet
from utils.exceptions import ConfigurationError

DATASET = {"kind": "synthetic", "samples": 64, "image_size": 8, "num_classes": 4, "seed": 5}


def desk_config(kind, /, **changes):
    data = {
        "experiment_id": f"test-{kind}",
        "kind": kind,
        "arch": "cnet",
        "width": 4,
        "dataset": dict(DATASET),
        "base_train": {"epochs": 2, "lr": 0.05},
        "finetune": {"epochs": 1, "lr": 0.01},
        "seeds": [0],
        "base_seeds": [0],
        "profiles": 3,
        "dtype": "float64",
        "workers": 1,
    }
    data.update(changes)
    return ExperimentConfig.from_dict(data).validate()


def test_config_rejects_unknown_keys():
    with pytest.raises(ConfigurationError):
        ExperimentConfig.from_dict({"experiment_id": "x", "kind": "random-search", "colour": "red"})


def test_config_requires_id_and_kind():
    with pytest.raises(ConfigurationError):
        ExperimentConfig.from_dict({"kind": "random-search"})


@pytest.mark.parametrize("changes", [
    {"kind": "grid-search"},
    {"seeds": []},
    {"cf_grid": [0.5]},
    {"reference_run": "/does/not/exist"},
    {"finetune": {"epochs": 0}},
    {"finetune": {"epochz": 3}},
    {"reward": {"kind": "cubic"}},
    {"pipeline": "staged"},
    {"stage_fraction": 1.5},
])
def test_config_validation(changes):
    with pytest.raises(ConfigurationError):
        desk_config("random-search", **changes)


def test_transfer_needs_profiles():
    with pytest.raises(ConfigurationError):
        desk_config("transfer-eval")


def test_load_experiment_config_with_overrides(tmp_path):
    path = tmp_path / "exp.json"
    path.write_text(json.dumps({"experiment_id": "a", "kind": "metric-sweep", "width": 16}))
    cfg = load_experiment_config(path, {"width": 8, "arch": None})
    assert cfg.width == 8 and cfg.arch == "cnet"
    with pytest.raises(ConfigurationError):
        load_experiment_config(tmp_path / "missing.json")


def test_cell_seed_is_stable():
    assert cell_seed(3, 1) == cell_seed(3, 1)
    assert cell_seed(3, 1) != cell_seed(1, 3)
    assert 0 <= cell_seed(7) < 2 ** 63


def test_window_percentile():
    reference = [(1.0, 0.5), (1.05, 0.6), (2.0, 0.9)]
    assert window_percentile(0.6, 1.0, reference) == (100.0, 2, 0.55)
    assert window_percentile(0.5, 1.0, reference) == (50.0, 2, 0.55)
    assert window_percentile(0.5, 5.0, reference) == (None, 0, None)


def test_select_top_profiles():
    rows = [ResultRow("x", "rs", name, 0, 0, cf, 1 - 1 / cf, acc) for name, cf, acc in [
        ("a", 2.0, 0.7), ("b", 2.05, 0.8), ("c", 3.5, 0.6), ("d", 3.55, 0.5)]]
    profiles = {name: equally_distributed(6, 0.5) for name in "abcd"}
    top = select_top_profiles(rows, profiles)
    assert {bucket: name for bucket, (name, _) in top.items()} == {2: "b", 3: "c"}


def test_run_directory_append(tmp_path):
    run = RunDirectory(tmp_path / "run")
    run.append(ResultRow("x", "curve", "p0", 0, 1, 2.0, 0.5, 0.75, 1.25))
    lines = (tmp_path / "run" / "results.csv").read_text().splitlines()
    assert lines[0] == "# schema: results-v1"
    assert lines[1] == "experiment_id,curve,profile,base,seed,cf,c,accuracy"
    assert lines[2] == "x,curve,p0,0,1,2.0,0.5,0.75"
    assert RunDirectory(tmp_path / "run").completed(("curve", "p0", 0, 1)) is not None
    assert read_results(tmp_path / "run" / "results.csv")[0].accuracy == 0.75


def test_random_search(tmp_path):
    cfg = desk_config("random-search", profiles=2, cf_max=5.0)
    rows, top = run_random_search(cfg, tmp_path / "run", tmp_path / "bases")
    assert len(rows) == 2
    spec = build_cnet(4, 4, (8, 8, 3))
    for row in rows:
        assert row.cf <= 5.0
        assert row.cf == pytest.approx(1.0 / (1.0 - row.c))
        profile = Profile.load(tmp_path / "run" / "profiles" / f"{row.profile}.json")
        assert compression_of(profile, spec)[0] == pytest.approx(row.cf)
    assert top
    for name in ("config.json", "seeds.json", "results.csv", "timings.csv"):
        assert (tmp_path / "run" / name).exists()
    assert list((tmp_path / "bases").glob("cnet-4_*.ckpt"))


def test_random_search_is_reproducible_and_resumable(tmp_path):
    cfg = desk_config("random-search", profiles=2)
    run_random_search(cfg, tmp_path / "a", tmp_path / "bases-a")
    run_random_search(cfg, tmp_path / "b", tmp_path / "bases-b")
    first = (tmp_path / "a" / "results.csv").read_text()
    assert first == (tmp_path / "b" / "results.csv").read_text()

    rows, _ = run_random_search(cfg, tmp_path / "a", tmp_path / "bases-a")
    assert len(rows) == 2
    assert (tmp_path / "a" / "results.csv").read_text() == first


def test_random_search_with_two_base_networks(tmp_path):
    cfg = desk_config("random-search", profiles=2, base_seeds=[0, 1])
    rows, _ = run_random_search(cfg, tmp_path / "run", tmp_path / "bases")
    assert sorted((r.profile, r.base) for r in rows) == [("p0000", 0), ("p0000", 1), ("p0001", 0), ("p0001", 1)]


@pytest.mark.parametrize("kind, curves", [
    ("init-sweep", {"pretrained", "random"}),
    ("metric-sweep", {"random", "l1", "taylor"}),
    ("profile-sweep", {"equal", "increasing", "decreasing", "random"}),
])
def test_sweep_curves(tmp_path, kind, curves):
    # the layer-wise metric sweep trains at least one epoch per flag
    epochs = 6 if kind == "metric-sweep" else 1
    cfg = desk_config(kind, cf_grid=[3.0], seeds=[0, 1], finetune={"epochs": epochs, "lr": 0.01})
    result = run_sweep_pipeline(kind, cfg, tmp_path / "run", tmp_path / "bases")
    assert set(result) == curves
    for curve, points in result.items():
        assert len(points) == 1
        cf_target, cf, mean, std, n = points[0]
        assert cf_target == 3.0 and n == 2
        assert 0.0 <= mean <= 1.0
        assert (tmp_path / "run" / kind / f"{curve}.csv").exists()


def test_sweep_skips_unreachable_targets(tmp_path):
    cfg = desk_config("metric-sweep", cf_grid=[1.0, 1e6], finetune={"epochs": 6, "lr": 0.01})
    result = run_sweep_pipeline("metric-sweep", cfg, tmp_path / "run", tmp_path / "bases")
    assert set(result) == {"random", "l1", "taylor"}
    assert all([p[0] for p in points] == [1.0] for points in result.values())


def test_metric_sweep_prunes_layer_by_layer():
    cfg = desk_config("metric-sweep")
    assert cfg.pipeline is None and cfg.job_pipeline == "layerwise"
    for curve in ("random", "l1", "taylor"):
        assert sweep_job_settings("metric-sweep", curve, cfg) == (curve, "pretrained", "layerwise")
    one_shot = desk_config("metric-sweep", pipeline="one-shot")
    assert sweep_job_settings("metric-sweep", "l1", one_shot)[2] == "one-shot"


def test_init_sweep_pipelines():
    cfg = desk_config("init-sweep", pipeline="layerwise")
    assert desk_config("init-sweep").job_pipeline == "one-shot"
    assert sweep_job_settings("init-sweep", "pretrained", cfg) == ("random", "pretrained", "layerwise")
    assert sweep_job_settings("init-sweep", "random", cfg) == ("random", "random", "one-shot")


def test_metric_sweep_desk_config_is_layerwise():
    path = Path(__file__).resolve().parent.parent / "configs" / "metric_sweep_desk.json"
    cfg = load_experiment_config(path)
    assert cfg.job_pipeline == "layerwise"
    assert cfg.finetune_config().epochs >= len(build_cnet(cfg.width).flags)


def test_transfer_of_own_top_profile_ranks_first(tmp_path):
    search = desk_config("random-search", profiles=3)
    run_random_search(search, tmp_path / "search", tmp_path / "bases")

    transfer = desk_config("transfer-eval", reference_run=str(tmp_path / "search"),
                           profile_paths=[str(tmp_path / "search" / "profiles" / "top")])
    ranking = run_transfer_eval(transfer, tmp_path / "transfer", tmp_path / "bases")
    assert ranking
    assert all(entry["percentile"] == 100.0 for entry in ranking)
    assert (tmp_path / "transfer" / "transfer.csv").exists()


def test_transfer_of_unpruned_profile(tmp_path):
    search = desk_config("random-search", profiles=2)
    run_random_search(search, tmp_path / "search", tmp_path / "bases")
    path = Profile("cnet-4", (1.0,) * 6).save(tmp_path / "full.json")
    transfer = desk_config("transfer-eval", reference_run=str(tmp_path / "search"), profile_paths=[str(path)])
    ranking = run_transfer_eval(transfer, tmp_path / "transfer", tmp_path / "bases")
    assert ranking[0]["profile"] == "full"
    assert ranking[0]["cf"] == 1.0


def test_transfer_rejects_foreign_profile(tmp_path):
    from utils.exceptions import ArchitectureMismatchError

    search = desk_config("random-search", profiles=1)
    run_random_search(search, tmp_path / "search", tmp_path / "bases")
    path = Profile("resnet20-4", (0.5,) * 13).save(tmp_path / "foreign.json")
    transfer = desk_config("transfer-eval", reference_run=str(tmp_path / "search"), profile_paths=[str(path)])
    with pytest.raises(ArchitectureMismatchError):
        run_transfer_eval(transfer, tmp_path / "transfer", tmp_path / "bases")


def test_rl_train_on_surrogate(tmp_path):
    cfg = desk_config("rl-train", surrogate=True,
                      ppo={"iterations": 2, "episodes_per_iteration": 3, "minibatch_size": 8, "hidden": [8, 8]})
    policy, curve, profiles = run_rl_train(cfg, tmp_path / "rl", tmp_path / "bases")
    assert len(curve) == 2
    assert policy.arch == "cnet-4"
    assert (tmp_path / "rl" / "policy.ckpt").exists()
    assert len((tmp_path / "rl" / "training_curve.csv").read_text().splitlines()) == 3
    episodes = (tmp_path / "rl" / "episodes.jsonl").read_text().splitlines()
    assert len(episodes) == 6
    assert {json.loads(line)["iteration"] for line in episodes} == {0, 1}
    name, profile = profiles[0]
    assert (tmp_path / "rl" / "profiles" / f"{name}.json").exists()
    assert profile.arch == "cnet-4"


def test_run_experiment_dispatch(tmp_path):
    cfg = desk_config("random-search", profiles=1)
    rows, _ = run_experiment(cfg, tmp_path / "run", tmp_path / "bases")
    assert len(rows) == 1
