import json

import pytest

from src.cli import build_parser, main
from src.radio import SURFACE_CSV_HEADER


@pytest.fixture
def scenario_file(small_payload, write_json):
    return str(write_json("small.json", small_payload))


def test_help_and_version_exit_cleanly(capsys):
    assert main(["--help"]) == 0
    assert "validate" in capsys.readouterr().out
    assert main(["--version"]) == 0


def test_usage_errors_exit_with_two(capsys):
    assert main(["fly"]) == 2
    assert main([]) == 2
    assert main(["gradcheck", "--nets", "0"]) == 2
    assert "usage error" in capsys.readouterr().err


def test_validate_reference_scenario(capsys):
    assert main(["validate"]) == 0
    out = capsys.readouterr().out
    assert "reference.json: ok" in out
    assert "4 agents" in out


def test_validate_reports_broken_scenarios(small_payload, write_json, capsys):
    small_payload["mission"]["z_min"] = 120.0
    path = write_json("broken.json", small_payload)
    assert main(["validate", "--scenario", str(path)]) == 1
    assert "error:" in capsys.readouterr().err


def test_map_writes_surface_and_manifest(scenario_file, tmp_path):
    out = tmp_path / "map"
    code = main(["map", "--scenario", scenario_file, "--altitude", "50", "--resolution", "50", "--out", str(out), "--quiet"])
    assert code == 0
    lines = (out / "sinr_surface.csv").read_text(encoding="utf-8").splitlines()
    assert lines[0].startswith("# scenario_digest=")
    assert lines[1] == SURFACE_CSV_HEADER
    manifest = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
    assert manifest["command"] == "map"
    assert manifest["outputs"] == [str(out / "sinr_surface.csv")]


def test_map_rejects_altitudes_outside_the_band(scenario_file, tmp_path):
    assert main(["map", "--scenario", scenario_file, "--altitude", "500", "--out", str(tmp_path)]) == 1


def test_eval_policy_flag_rules(scenario_file, tmp_path):
    assert main(["eval", "--scenario", scenario_file, "--baseline", "full", "--out", str(tmp_path)]) == 2
    assert (
        main(["eval", "--scenario", scenario_file, "--baseline", "shortest", "--policy", "m.json", "--out", str(tmp_path)])
        == 2
    )
    assert main(["eval", "--scenario", scenario_file, "--baseline", "bogus", "--out", str(tmp_path)]) == 2


def test_eval_shortest_path_writes_metrics_and_logs(scenario_file, tmp_path):
    code = main(
        ["eval", "--scenario", scenario_file, "--baseline", "shortest", "--episodes", "2", "--out", str(tmp_path), "--quiet"]
    )
    assert code == 0
    result = json.loads((tmp_path / "metrics.json").read_text(encoding="utf-8"))
    assert result["kind"] == "shortest_path"
    assert result["episodes"] == 2
    assert (tmp_path / "episode_001.jsonl").exists()
    assert (tmp_path / "trajectories.csv").exists()


def test_train_then_evaluate_the_model(scenario_file, tmp_path):
    train_dir = tmp_path / "train"
    assert main(["train", "--scenario", scenario_file, "--episodes", "1", "--out", str(train_dir), "--quiet"]) == 0
    model = train_dir / "model.json"
    assert model.exists()
    report = json.loads((train_dir / "report.json").read_text(encoding="utf-8"))
    assert len(report["episode_returns"]) == 1
    manifest = json.loads((train_dir / "manifest.json").read_text(encoding="utf-8"))
    assert "rl.episodes: flag" in manifest["provenance"]
    eval_dir = tmp_path / "eval"
    code = main(
        ["eval", "--scenario", scenario_file, "--policy", str(model), "--episodes", "1", "--out", str(eval_dir), "--quiet"]
    )
    assert code == 0
    # The full policy's model cannot drive the non-SINR variant.
    code = main(
        ["eval", "--scenario", scenario_file, "--policy", str(model), "--baseline", "nosinr", "--out", str(eval_dir)]
    )
    assert code == 1


def test_missing_model_file_is_a_runtime_error(scenario_file, tmp_path):
    code = main(["eval", "--scenario", scenario_file, "--policy", str(tmp_path / "none.json"), "--out", str(tmp_path)])
    assert code == 1


def test_gradcheck_passes(capsys):
    assert main(["gradcheck", "--nets", "3", "--seed", "4"]) == 0
    assert "ok" in capsys.readouterr().out


def test_seed_comes_from_the_environment(monkeypatch, scenario_file, tmp_path):
    monkeypatch.setenv("LAE_SIM_SEED", "12")
    code = main(["eval", "--scenario", scenario_file, "--baseline", "shortest", "--episodes", "1", "--out", str(tmp_path), "--quiet"])
    assert code == 0
    manifest = json.loads((tmp_path / "manifest.json").read_text(encoding="utf-8"))
    assert manifest["seed"] == 12
    assert "seed: LAE_SIM_SEED" in manifest["provenance"]
    monkeypatch.setenv("LAE_SIM_SEED", "minus one")
    assert main(["gradcheck", "--nets", "1"]) == 2


def test_parser_lists_every_subcommand():
    help_text = build_parser().format_help()
    for name in ("train", "eval", "compare", "map", "gradcheck", "validate"):
        assert name in help_text
