import dataclasses

import numpy as np
import pytest

from promptmesh.comms import CommLedger, CommTable, comm_table
from promptmesh.core import CommModel, FederationConfig
from promptmesh.data import HETEROGENEOUS, HOMOGENEOUS, build_scenario
from promptmesh.metrics import (
    ConvergenceSeries,
    EvalReport,
    convergence_series,
    evaluate_federation,
    export,
    import_comm_table,
    import_ledger,
    import_report,
    import_series,
    round9,
)
from promptmesh.protocol import init_federation, run_round

from conftest import digest


@pytest.fixture
def tiny_world(tiny_cfg):
    scenario = build_scenario(HOMOGENEOUS, tiny_cfg)
    federation = init_federation(tiny_cfg, scenario)
    return tiny_cfg, scenario, federation


class TestEvaluateFederation:
    def test_mean_is_exactly_the_arithmetic_mean(self, tiny_world):
        cfg, scenario, federation = tiny_world
        report = evaluate_federation(federation, scenario, cfg)
        values = np.array(list(report.per_client_accuracy.values()))
        assert report.mean_accuracy == float(values.mean())
        assert report.std_accuracy == float(values.std())

    def test_identical_prompts_give_exactly_zero_std(self, tiny_world):
        cfg, scenario, federation = tiny_world
        shared = federation[0].active_prompts
        for st in federation:
            st.active_prompts = shared.copy()
        report = evaluate_federation(federation, scenario, cfg)
        assert report.std_accuracy == 0.0
        accs = set(report.per_client_accuracy.values())
        assert len(accs) == 1

    def test_evaluation_is_pure(self, tiny_world):
        cfg, scenario, federation = tiny_world
        run_round(federation, scenario.encoders, cfg, 0)
        before = [digest(st.active_prompts.vectors) for st in federation]
        pools = [len(st.pool) for st in federation]
        r1 = evaluate_federation(federation, scenario, cfg)
        r2 = evaluate_federation(federation, scenario, cfg)
        assert [digest(st.active_prompts.vectors) for st in federation] == before
        assert [len(st.pool) for st in federation] == pools
        assert r1.per_client_accuracy == r2.per_client_accuracy

    def test_per_domain_split(self, tiny_cfg):
        scenario = build_scenario(HETEROGENEOUS, tiny_cfg)
        federation = init_federation(tiny_cfg, scenario)
        report = evaluate_federation(federation, scenario, tiny_cfg)
        assert sorted(report.per_domain) == [0, 1]
        assert report.per_domain[0].client_ids == [0, 1]
        assert report.per_domain[1].client_ids == [2, 3]

    def test_single_client_domain_has_no_std(self, tiny_cfg):
        cfg = dataclasses.replace(tiny_cfg, num_clients=2, recipients_per_round=1)
        scenario = build_scenario(HETEROGENEOUS, cfg)
        federation = init_federation(cfg, scenario)
        report = evaluate_federation(federation, scenario, cfg)
        assert report.per_domain[0].std is None
        assert report.per_domain[1].std is None
        assert report.std_accuracy >= 0.0


class TestConvergenceSeries:
    def _report(self, rnd, accs):
        values = np.array(list(accs.values()))
        return EvalReport(
            round_of_eval=rnd,
            per_client_accuracy=accs,
            mean_accuracy=float(values.mean()),
            std_accuracy=float(values.std()),
        )

    def test_orders_by_round(self):
        series = convergence_series(
            [self._report(10, {0: 0.5}), self._report(1, {0: 0.2}), self._report(5, {0: 0.4})]
        )
        assert series.rounds == [1, 5, 10]
        assert series.means == [0.2, 0.4, 0.5]
        assert series.first_std == series.stds[0]
        assert series.final_std == series.stds[-1]

    def test_empty_input_is_rejected(self):
        with pytest.raises(ValueError):
            convergence_series([])


class TestRound9:
    def test_quantises_to_nine_significant_digits(self):
        assert round9(0.123456789123456) == 0.123456789
        assert round9(1234567891.23) == 1234567890.0
        assert round9(0.5) == 0.5


class TestExportImport:
    @pytest.fixture
    def report(self, tiny_world):
        cfg, scenario, federation = tiny_world
        rep = evaluate_federation(federation, scenario, cfg)
        rep.round_of_eval = 5
        return cfg, rep

    def test_report_json_round_trip(self, report, tmp_path):
        cfg, rep = report
        p = tmp_path / "report.json"
        export(rep, str(p), "json", cfg)
        back = import_report(str(p))
        assert back.round_of_eval == 5
        for c, a in rep.per_client_accuracy.items():
            assert back.per_client_accuracy[c] == round9(a)
        assert back.mean_accuracy == round9(rep.mean_accuracy)

    def test_report_csv_round_trip(self, report, tmp_path):
        cfg, rep = report
        p = tmp_path / "report.csv"
        export(rep, str(p), "csv", cfg)
        back = import_report(str(p))
        assert back.round_of_eval == 5
        for c, a in rep.per_client_accuracy.items():
            assert back.per_client_accuracy[c] == round9(a)
        # aggregates recomputed from quantised values stay consistent
        values = np.array(list(back.per_client_accuracy.values()))
        assert back.mean_accuracy == float(values.mean())

    def test_csv_carries_the_generating_config(self, report, tmp_path):
        cfg, rep = report
        p = tmp_path / "report.csv"
        export(rep, str(p), "csv", cfg)
        first = p.read_text().splitlines()[0]
        assert first.startswith("# config ")
        assert f'"num_clients": {cfg.num_clients}' in first

    def test_json_carries_the_generating_config(self, report, tmp_path):
        import json

        cfg, rep = report
        p = tmp_path / "report.json"
        export(rep, str(p), "json", cfg)
        payload = json.loads(p.read_text())
        assert payload["config"]["num_clients"] == cfg.num_clients

    def test_series_round_trip_both_formats(self, tiny_world, tmp_path):
        cfg, scenario, federation = tiny_world
        reports = []
        for r in range(2):
            run_round(federation, scenario.encoders, cfg, r)
            rep = evaluate_federation(federation, scenario, cfg)
            rep.round_of_eval = r + 1
            reports.append(rep)
        series = convergence_series(reports)
        for fmt in ("json", "csv"):
            p = tmp_path / f"series.{fmt}"
            export(series, str(p), fmt, cfg)
            back = import_series(str(p))
            assert back.rounds == series.rounds
            assert back.means == [round9(m) for m in series.means]
            assert back.per_client[0] == {
                c: round9(v) for c, v in series.per_client[0].items()
            }

    def test_ledger_round_trip_both_formats(self, tmp_path):
        cfg = FederationConfig()
        ledger = CommLedger(rounds=[0, 1, 2], per_round_bytes=[10, 20, 30], per_round_messages=[1, 2, 3])
        for fmt in ("json", "csv"):
            p = tmp_path / f"ledger.{fmt}"
            export(ledger, str(p), fmt, cfg)
            back = import_ledger(str(p))
            assert back.rounds == ledger.rounds
            assert back.per_round_bytes == ledger.per_round_bytes
            assert back.cumulative_bytes == 60

    def test_comm_table_csv_matches_pinned_schema(self, tmp_path):
        cfg = dataclasses.replace(FederationConfig(), num_clients=59, rounds=3)
        table = comm_table(CommModel(), 59, 3, 4, 512)
        p = tmp_path / "table.csv"
        export(table, str(p), "csv", cfg)
        header = p.read_text().splitlines()[1]
        assert header == "round,fedtpg_cum_bytes,zerodfl_worst_cum_bytes,zerodfl_s5_cum_bytes,zerodfl_best_cum_bytes"
        back = import_comm_table(str(p))
        assert back.zerodfl_s5_cum_bytes == table.zerodfl_s5_cum_bytes
        assert back.num_clients == 59

    def test_comm_table_json_round_trip(self, tmp_path):
        cfg = FederationConfig()
        table = comm_table(CommModel(), 8, 4, 4, 16)
        p = tmp_path / "table.json"
        export(table, str(p), "json", cfg)
        back = import_comm_table(str(p))
        assert back.rounds == table.rounds
        assert back.zerodfl_worst_cum_bytes == table.zerodfl_worst_cum_bytes

    def test_unknown_format_is_rejected(self, report, tmp_path):
        cfg, rep = report
        with pytest.raises(ValueError, match="format"):
            export(rep, str(tmp_path / "x.yaml"), "yaml", cfg)

    def test_unsupported_object_is_rejected(self, tmp_path):
        with pytest.raises(TypeError):
            export({"not": "exportable"}, str(tmp_path / "x.json"), "json", FederationConfig())

    def test_exports_are_deterministic(self, report, tmp_path):
        cfg, rep = report
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        export(rep, str(a), "json", cfg)
        export(rep, str(b), "json", cfg)
        assert a.read_bytes() == b.read_bytes()
