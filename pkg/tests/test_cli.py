import sys

import pytest

from scripts import cli, emit_landscape, prune, random_search, report, rl_train, train_base
from scripts.trainer import load_net

DATA_FLAGS = ["--samples", "64"]


def run_verb(monkeypatch, module, *args):
    monkeypatch.setattr(sys, "argv", [module.__name__, *args])
    module.main()


def exit_code(monkeypatch, module, *args):
    with pytest.raises(SystemExit) as info:
        run_verb(monkeypatch, module, *args)
    return info.value.code


@pytest.fixture
def base_checkpoint(tmp_path, monkeypatch):
    path = tmp_path / "base.ckpt"
    run_verb(monkeypatch, train_base, "--width", "4", "--epochs", "1", "--out", str(path), *DATA_FLAGS)
    return path


def test_cli_unknown_verb(monkeypatch, capsys):
    monkeypatch.setattr(sys, "argv", ["cli.py"])
    with pytest.raises(SystemExit) as info:
        cli.main(["shrink"])
    assert info.value.code == 2
    assert "Unknown verb 'shrink'" in capsys.readouterr().err


def test_cli_usage(monkeypatch, capsys):
    monkeypatch.setattr(sys, "argv", ["cli.py"])
    with pytest.raises(SystemExit) as info:
        cli.main(["--help"])
    assert info.value.code == 0
    assert "random-search" in capsys.readouterr().out
    with pytest.raises(SystemExit) as info:
        cli.main([])
    assert info.value.code == 2


def test_cli_dispatches_to_verb(monkeypatch, capsys):
    monkeypatch.setattr(sys, "argv", ["cli.py"])
    cli.main(["report", "--arch", "cnet", "--width", "32"])
    out = capsys.readouterr().out
    assert "Architecture: cnet-32" in out
    assert "Flags: 6" in out


def test_report_flag_table(monkeypatch, capsys):
    run_verb(monkeypatch, report, "--arch", "resnet20", "--width", "4")
    out = capsys.readouterr().out
    assert "Flags: 13" in out
    assert "alpha10" in out and "fc.weight" in out


def test_report_export(tmp_path, monkeypatch):
    path = tmp_path / "arch.json"
    run_verb(monkeypatch, report, "--arch", "cnet", "--width", "8", "--export", str(path))
    assert '"arch": "cnet"' in path.read_text()


def test_report_needs_a_subject(monkeypatch, capsys):
    assert exit_code(monkeypatch, report) == 2
    assert "Nothing to report" in capsys.readouterr().err


def test_emit_landscape_all(tmp_path, monkeypatch, capsys):
    out_dir = tmp_path / "landscapes"
    run_verb(monkeypatch, emit_landscape, "--all", "--resolution", "11", "--out-dir", str(out_dir))
    assert capsys.readouterr().out.count("✅") == 3
    assert len(list(out_dir.glob("*.csv"))) == 3


def test_emit_landscape_rejects_bad_compression(tmp_path, monkeypatch):
    assert exit_code(monkeypatch, emit_landscape, "--ce", "1.5", "--out-dir", str(tmp_path)) == 2


def test_train_base_then_prune(tmp_path, monkeypatch, capsys, base_checkpoint):
    assert load_net(base_checkpoint).metadata["accuracy"] >= 0.0
    capsys.readouterr()

    pruned = tmp_path / "pruned.ckpt"
    run_verb(monkeypatch, prune, "--base", str(base_checkpoint), "--family", "equal", "--param", "0.5",
             "--epochs", "1", "--out", str(pruned), *DATA_FLAGS)
    out = capsys.readouterr().out
    assert "Compression factor" in out
    assert "keeps 2/4" in out
    net = load_net(pruned)
    assert all(flag.length == 2 for flag in net.spec.flags)


def test_prune_with_profile_file(tmp_path, monkeypatch, capsys, base_checkpoint):
    from scripts.profiles import Profile

    profile = Profile("cnet-4", (1.0, 0.5, 1.0, 0.5, 1.0, 0.5)).save(tmp_path / "p.json")
    run_verb(monkeypatch, prune, "--base", str(base_checkpoint), "--profile", str(profile),
             "--epochs", "1", "--strategy", "l1", *DATA_FLAGS)
    assert "Prune Result" in capsys.readouterr().out


def test_prune_missing_base(tmp_path, monkeypatch, capsys):
    code = exit_code(monkeypatch, prune, "--base", str(tmp_path / "none.ckpt"), "--family", "equal",
                     "--param", "0.5")
    assert code == 2
    assert "Pruning network" in capsys.readouterr().err


def test_prune_needs_param_or_cf(monkeypatch, capsys, base_checkpoint):
    assert exit_code(monkeypatch, prune, "--base", str(base_checkpoint), "--family", "equal",
                     *DATA_FLAGS) == 2


def test_prune_rejects_foreign_profile(tmp_path, monkeypatch, base_checkpoint):
    from scripts.profiles import Profile

    profile = Profile("resnet20-4", (0.5,) * 13).save(tmp_path / "p.json")
    assert exit_code(monkeypatch, prune, "--base", str(base_checkpoint), "--profile", str(profile),
                     *DATA_FLAGS) == 1


def test_random_search_verb(tmp_path, monkeypatch, capsys):
    run_verb(monkeypatch, random_search, "--profiles", "1", "--epochs", "1", "--base-epochs", "1",
             "--width", "4", "--experiment-id", "search", *DATA_FLAGS)
    run_dir = tmp_path / "runs" / "search"
    assert (run_dir / "results.csv").exists()
    assert (run_dir / "profiles" / "p0000.json").exists()
    assert list((tmp_path / "runs" / "bases").glob("*.ckpt"))
    assert "Results:" in capsys.readouterr().out


def test_random_search_verb_bad_config(tmp_path, monkeypatch):
    assert exit_code(monkeypatch, random_search, "--config", str(tmp_path / "missing.json")) == 2


def test_rl_train_verb_on_surrogate(tmp_path, monkeypatch):
    run_verb(monkeypatch, rl_train, "--surrogate", "--iterations", "2", "--episodes", "2",
             "--width", "4", *DATA_FLAGS)
    run_dir = tmp_path / "runs" / "rl-train"
    assert (run_dir / "policy.ckpt").exists()
    assert len((run_dir / "episodes.jsonl").read_text().splitlines()) == 4
