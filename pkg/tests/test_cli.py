import json

import pytest

from promptmesh.cli import main

FAST_RUN = {"config": {"rounds": 4, "eval_every": 2}}

RUN_FILES = [
    "config.json",
    "summary.json",
    "report.csv",
    "report.json",
    "series.csv",
    "series.json",
    "ledger.csv",
    "ledger.json",
    "convergence.png",
    "losses.png",
    "traffic.png",
]


def write_spec(tmp_path, payload, name="spec.json"):
    p = tmp_path / name
    p.write_text(json.dumps(payload))
    return str(p)


class TestRunCommand:
    def test_writes_full_report_directory(self, tmp_path):
        spec = write_spec(tmp_path, FAST_RUN)
        out = tmp_path / "out"
        assert main(["run", "--spec", spec, "--out", str(out)]) == 0
        for name in RUN_FILES:
            assert (out / name).exists(), name
        summary = json.loads((out / "summary.json").read_text())
        assert summary["config"]["rounds"] == 4
        assert summary["final_eval"]["round"] == 4
        assert summary["traffic"]["total_messages"] == 4 * 8 * 3

    def test_trace_schema(self, tmp_path):
        spec = write_spec(tmp_path, FAST_RUN)
        out = tmp_path / "out"
        assert main(["run", "--spec", spec, "--out", str(out), "--trace"]) == 0
        lines = (out / "trace.jsonl").read_text().splitlines()
        assert len(lines) == 4 * 8 * 3
        row = json.loads(lines[0])
        assert set(row) == {"round", "sender", "recipient", "m_s", "bytes"}
        assert row["m_s"] == 4
        assert row["bytes"] == 27356

    def test_invalid_config_exits_2_and_leaves_nothing(self, tmp_path, capsys):
        spec = write_spec(tmp_path, {"config": {"shared_prompts": 9, "rounds": 2}})
        out = tmp_path / "out"
        assert main(["run", "--spec", spec, "--out", str(out)]) == 2
        assert "shared_prompts" in capsys.readouterr().err
        assert not out.exists() or not any(out.iterdir())

    def test_unknown_config_key_exits_2(self, tmp_path, capsys):
        spec = write_spec(tmp_path, {"config": {"sahred_prompts": 2}})
        assert main(["run", "--spec", spec, "--out", str(tmp_path / "out")]) == 2
        assert "sahred_prompts" in capsys.readouterr().err

    def test_unknown_spec_key_exits_2(self, tmp_path, capsys):
        spec = write_spec(tmp_path, {"config": {}, "extra": 1})
        assert main(["run", "--spec", spec, "--out", str(tmp_path / "out")]) == 2
        assert "extra" in capsys.readouterr().err

    def test_malformed_json_exits_2(self, tmp_path, capsys):
        p = tmp_path / "spec.json"
        p.write_text("{not json")
        assert main(["run", "--spec", str(p), "--out", str(tmp_path / "out")]) == 2
        assert "JSON" in capsys.readouterr().err

    def test_missing_spec_file_exits_2(self, tmp_path, capsys):
        assert main(["run", "--spec", str(tmp_path / "nope.json"), "--out", str(tmp_path / "o")]) == 2

    def test_baselines_get_their_own_reports(self, tmp_path):
        spec = write_spec(tmp_path, {**FAST_RUN, "baselines": ["isolation"]})
        out = tmp_path / "out"
        assert main(["run", "--spec", spec, "--out", str(out)]) == 0
        assert (out / "baselines" / "isolation" / "summary.json").exists() is False
        assert (out / "baselines" / "isolation" / "report.json").exists()
        summary = json.loads((out / "summary.json").read_text())
        assert summary["baselines"]["isolation"]["total_bytes"] == 0

    def test_unknown_baseline_exits_2(self, tmp_path):
        spec = write_spec(tmp_path, {**FAST_RUN, "baselines": ["telepathy"]})
        assert main(["run", "--spec", spec, "--out", str(tmp_path / "out")]) == 2

    def test_heterogeneous_scenario_from_spec(self, tmp_path):
        spec = write_spec(tmp_path, {**FAST_RUN, "scenario": "heterogeneous"})
        out = tmp_path / "out"
        assert main(["run", "--spec", spec, "--out", str(out)]) == 0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["scenario"] == "heterogeneous"


class TestSweepCommand:
    def test_share_sweep_marks_isolation_and_errors(self, tmp_path):
        spec = write_spec(
            tmp_path,
            {
                "config": {"rounds": 2},
                "sweep": {"param": "shared_prompts", "values": [0, 4, 5], "seeds": [0]},
            },
        )
        out = tmp_path / "out"
        assert main(["sweep", "--spec", spec, "--out", str(out)]) == 0
        summary = json.loads((out / "sweep_summary.json").read_text())
        cells = {c["value"]: c for c in summary["cells"]}
        assert cells[0]["note"] == "isolation baseline"
        assert cells[0]["status"] == "ok"
        assert cells[0]["total_bytes"] == 0
        assert cells[4]["status"] == "ok"
        assert cells[5]["status"].startswith("error")
        values = [row["value"] for row in summary["aggregate"]]
        assert values == [0, 4]  # failed cells are excluded from aggregation
        assert (out / "sweep.csv").exists()
        assert (out / "sweep.png").exists()

    def test_sweep_requires_sweep_section(self, tmp_path, capsys):
        spec = write_spec(tmp_path, {"config": {}})
        assert main(["sweep", "--spec", spec, "--out", str(tmp_path / "out")]) == 2
        assert "sweep" in capsys.readouterr().err

    def test_unknown_param_exits_2(self, tmp_path, capsys):
        spec = write_spec(
            tmp_path, {"config": {}, "sweep": {"param": "warp_factor", "values": [1]}}
        )
        assert main(["sweep", "--spec", spec, "--out", str(tmp_path / "out")]) == 2
        assert "warp_factor" in capsys.readouterr().err

    def test_protocol_sweep_shares_the_task(self, tmp_path):
        # sweeping a protocol knob keeps the scenario identical, so the
        # isolation rows of two sweeps over different knobs must agree
        spec_a = write_spec(
            tmp_path,
            {"config": {"rounds": 2}, "sweep": {"param": "shared_prompts", "values": [0]}},
            "a.json",
        )
        spec_b = write_spec(
            tmp_path,
            {"config": {"rounds": 2, "shared_prompts": 0}, "sweep": {"param": "retention_rounds", "values": [1]}},
            "b.json",
        )
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        assert main(["sweep", "--spec", spec_a, "--out", str(out_a)]) == 0
        assert main(["sweep", "--spec", spec_b, "--out", str(out_b)]) == 0
        cell_a = json.loads((out_a / "sweep_summary.json").read_text())["cells"][0]
        cell_b = json.loads((out_b / "sweep_summary.json").read_text())["cells"][0]
        assert cell_a["final_mean_accuracy"] == cell_b["final_mean_accuracy"]


class TestCommCommand:
    def test_emits_reference_and_config_tables(self, tmp_path):
        out = tmp_path / "out"
        assert main(["comm", "--out", str(out)]) == 0
        for name in [
            "comm_reference.csv",
            "comm_reference.json",
            "comm_config.csv",
            "comm_config.json",
            "comm_reference.png",
            "comm_config.png",
            "comm_summary.json",
        ]:
            assert (out / name).exists(), name
        summary = json.loads((out / "comm_summary.json").read_text())
        ref = summary["reference"]
        assert ref["fedtpg_total_bytes"] == 467e9
        assert ref["zerodfl_s5_total_bytes"] == 4035010000
        assert 105 <= ref["zerodfl_s5_reduction"] <= 130

    def test_no_learning_validation(self, tmp_path):
        # comm must price even configs the simulator would reject
        spec = write_spec(tmp_path, {"config": {"rounds": 0}})
        out = tmp_path / "out"
        assert main(["comm", "--spec", spec, "--out", str(out)]) == 0
        table = json.loads((out / "comm_config.json").read_text())
        assert table["rows"] == [[0, 0.0, 0, 0, 0]]

    def test_reference_table_has_501_rows(self, tmp_path):
        out = tmp_path / "out"
        assert main(["comm", "--out", str(out)]) == 0
        lines = (out / "comm_reference.csv").read_text().splitlines()
        assert len(lines) == 2 + 501  # config comment + header + rows


class TestParser:
    def test_requires_out(self, capsys):
        with pytest.raises(SystemExit):
            main(["run"])

    def test_profile_choices(self):
        with pytest.raises(SystemExit):
            main(["run", "--out", "x", "--profile", "poster"])
