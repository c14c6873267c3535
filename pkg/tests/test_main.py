"""
Tests for the command line entry point.
"""

import json

import pytest

from src.commands.haircut import HaircutCommand
from src.main import build_parser, command_arguments, main

ASSET = {"mu": 0.05, "sigma_a": 0.2, "lambda_a": 25.0, "p_u": 0.4, "eta": 60.0, "theta": 45.0}


def write_config(tmp_path, **overrides):
    data = {
        "schema_version": 1,
        "asset": {"params": ASSET},
        "borrowers": [{"label": "A", "cds": {"spread_bps": 80.0}}],
        "transaction": {"haircut": 0.05},
        "simulation": {"seed": 11, "n_paths": 2000, "partitions": 4},
    }
    data.update(overrides)
    path = tmp_path / "run.json"
    path.write_text(json.dumps(data))
    return str(path)


class TestParser:
    def test_price_flags(self):
        args = build_parser().parse_args(
            ["price", "--config", "run.json", "--seed", "5", "--borrower", "A", "--self-check"]
        )
        assert command_arguments(args) == {
            "config_path": "run.json",
            "out_dir": ".",
            "self_check": True,
            "seed": 5,
            "borrower": "A",
        }

    def test_calibrate_flags(self):
        args = build_parser().parse_args(["calibrate", "prices.csv", "--zero-drift", "--out", "fit"])
        arguments = command_arguments(args)
        assert arguments["csv_path"] == "prices.csv"
        assert arguments["zero_drift"] is True
        assert arguments["out_dir"] == "fit"
        assert "seed" not in arguments

    def test_unknown_command(self):
        with pytest.raises(SystemExit):
            build_parser().parse_args(["hedge"])

    @pytest.mark.parametrize("command", ["calibrate", "haircut", "price"])
    def test_help_lists_exit_codes(self, command, capsys):
        with pytest.raises(SystemExit) as info:
            build_parser().parse_args([command, "--help"])
        assert info.value.code == 0
        out = capsys.readouterr().out
        assert "exit codes:" in out
        assert "4  --self-check found an inconsistency" in out
        assert "3  rating target unreachable" in out


def test_config_required_for_haircut():
    with pytest.raises(SystemExit):
        main(["haircut"])


def test_replay_price_run(tmp_path):
    config = write_config(
        tmp_path, pricing={"replay": {"el": 9.33e-6, "es": 0.008946, "triple_a_haircut": 0.081}}
    )
    out = tmp_path / "out"
    assert main(["price", "--config", config, "--out", str(out)]) == 0
    payload = json.loads((out / "indemnity_sheet.json").read_text())
    assert payload["total_bps"] == pytest.approx(15.72, abs=0.01)


def test_exit_code_comes_from_command(mocker, tmp_path):
    mocker.patch.object(
        HaircutCommand,
        "execute",
        return_value={"success": False, "error": "Target unreachable", "details": "Aaa", "exit_code": 3},
    )
    assert main(["haircut", "--config", write_config(tmp_path)]) == 3


def test_zero_workers_is_input_error(tmp_path):
    assert main(["haircut", "--config", write_config(tmp_path), "--workers", "0"]) == 1


def test_worker_count_does_not_change_outputs(tmp_path):
    """Test that one and two workers write byte-identical files."""
    config = write_config(tmp_path, targets=[{"label": "loose", "threshold": 1e-3}])
    outputs = []
    for workers in ("1", "2"):
        out = tmp_path / f"w{workers}"
        assert main(["haircut", "--config", config, "--workers", workers, "--out", str(out)]) == 0
        outputs.append(
            ((out / "haircut_schedule.csv").read_bytes(), (out / "haircut_resolved.json").read_bytes())
        )
    assert outputs[0] == outputs[1]
