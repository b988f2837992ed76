import pytest

import lane_affordance_cli as cli

TINY_CONFIG = """
[train]
grid_scale = desk
epochs = 0
eval_instances = 1

[data]
samples_per_layout = 1
max_workers = 2
out_dir = run
"""


@pytest.fixture
def workspace(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.setenv("DSLA_WORK_DIR", str(tmp_path))
    monkeypatch.setenv("DSLA_DEVICE", "cpu")
    monkeypatch.setenv("DSLA_LOG_LEVEL", "WARNING")
    config_path = tmp_path / "tiny.cfg"
    config_path.write_text(TINY_CONFIG, encoding="utf-8")
    return tmp_path, str(config_path)


def test_usage_errors_exit_with_one(workspace) -> None:
    assert cli.main(["explode"]) == cli.EXIT_USAGE
    assert cli.main(["train", "--bogus"]) == cli.EXIT_USAGE
    assert cli.main([]) == cli.EXIT_USAGE


def test_usage_errors_print_the_full_help(workspace, capsys) -> None:
    assert cli.main(["explode"]) == cli.EXIT_USAGE
    err = capsys.readouterr().err
    assert "Exemplos de uso" in err
    assert "sweep" in err
    assert "❌ ERRO" in err

    assert cli.main(["eval", "--split", "nowhere"]) == cli.EXIT_USAGE
    err = capsys.readouterr().err
    assert "--checkpoint" in err
    assert "--split" in err


def test_help_exits_with_zero(workspace, capsys) -> None:
    assert cli.main(["--help"]) == cli.EXIT_OK
    assert "gen-data" in capsys.readouterr().out


def test_runtime_failures_exit_with_two(workspace) -> None:
    root, config = workspace
    assert cli.main(["train", "--config", str(root / "missing.cfg")]) == cli.EXIT_RUNTIME
    assert cli.main(["eval", "--config", config, "--checkpoint", str(root / "nothing.pt")]) == cli.EXIT_RUNTIME
    assert cli.main(["eval", "--config", config]) == cli.EXIT_RUNTIME


def test_gen_data_writes_dataset(workspace) -> None:
    root, config = workspace
    assert cli.main(["gen-data", "--config", config, "--out", "dataset"]) == cli.EXIT_OK
    assert (root / "dataset" / "manifest.json").exists()
    assert any((root / "dataset" / "train" / "samples").glob("*.context.bin"))
    assert any((root / "dataset" / "test" / "eval").glob("*.modes.json"))


def test_train_then_eval_and_render_last_run(workspace) -> None:
    root, config = workspace
    assert cli.main(["train", "--config", config, "--seed", "2"]) == cli.EXIT_OK
    assert (root / "run" / "last.pt").exists()
    assert (root / "run" / "config.cfg").exists()
    assert (root / ".data" / "runs.json").exists()

    assert cli.main(["eval", "--config", config, "--checkpoint", "last", "--split", "all"]) == cli.EXIT_OK
    assert (root / "run" / "eval" / "eval_test.json").exists()
    assert (root / "run" / "eval" / "eval_train.csv").exists()

    assert cli.main(["render", "--config", config, "--checkpoint", "best"]) == cli.EXIT_OK
    assert len(list((root / "run" / "render").glob("*.png"))) == 1
