"""Command-line surface: exit codes, files produced, determinism."""

import json

import numpy as np
import pytest

from vcut.cli import main
from vcut.reporting import validate_report
from vcut.tensorops import Rng
from vcut.vten import read_vten, write_vten


@pytest.fixture(scope="module")
def model_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("model") / "tiny"
    assert main(["init-model", "--layout", "tiny", "--frames", "3", "--out", str(d)]) == 0
    return d


class TestRun:
    def test_vcut_run_writes_states_and_stats(self, model_dir, tmp_path, capsys):
        out = tmp_path / "run"
        rc = main([
            "run", "--weights", str(model_dir), "--mode", "vcut",
            "--steps", "4", "--cut-step", "3", "--seed", "1",
            "--height", "4", "--width", "4", "--out", str(out),
        ])
        assert rc == 0
        states = sorted(out.glob("state_*.vten"))
        assert len(states) == 5
        stats = json.loads((out / "run_stats.json").read_text())
        validate_report(stats)
        assert stats["stats"]["forward_passes"] == 6  # 2*2 guided + 2 single
        assert "denoiser evaluations" in capsys.readouterr().out

    def test_shared_seed_prefix_match_across_modes(self, model_dir, tmp_path):
        outs = {}
        for mode, cut in (("vcut", 3), ("modified", 5)):
            out = tmp_path / mode
            assert main([
                "run", "--weights", str(model_dir), "--mode", mode,
                "--steps", "4", "--cut-step", str(cut), "--seed", "7",
                "--height", "4", "--width", "4", "--out", str(out),
            ]) == 0
            outs[mode] = out
        for idx in range(3):
            a = read_vten(outs["vcut"] / f"state_{idx:03d}.vten")
            b = read_vten(outs["modified"] / f"state_{idx:03d}.vten")
            assert a.tobytes() == b.tobytes()


class TestSurgery:
    def test_surgery_then_double_surgery(self, model_dir, tmp_path):
        out = tmp_path / "folded"
        assert main(["surgery", "--weights", str(model_dir), "--out", str(out)]) == 0
        report = json.loads((out / "surgery_report.json").read_text())
        validate_report(report)
        assert report["param_delta"] > 0
        assert report["temporal_cross_sites_removed"] == report["spatial_cross_sites_folded"]
        # refusing to fold twice is an argument-class failure
        assert main(["surgery", "--weights", str(out), "--out", str(tmp_path / "x")]) == 2

    def test_folded_model_still_runs(self, model_dir, tmp_path):
        folded = tmp_path / "folded2"
        main(["surgery", "--weights", str(model_dir), "--out", str(folded)])
        rc = main([
            "run", "--weights", str(folded), "--mode", "vcut", "--steps", "3",
            "--cut-step", "2", "--seed", "0", "--height", "4", "--width", "4",
            "--out", str(tmp_path / "frun"),
        ])
        assert rc == 0
        # but the baseline recipe cannot run on a folded model
        rc = main([
            "run", "--weights", str(folded), "--mode", "baseline", "--steps", "2",
            "--seed", "0", "--height", "4", "--width", "4", "--out", str(tmp_path / "b"),
        ])
        assert rc == 2


class TestCost:
    def test_cost_stdout_json(self, capsys):
        assert main(["cost", "--arch", "svd", "--cut-step", "17", "--baseline-latency", "68.4"]) == 0
        doc = json.loads(capsys.readouterr().out)
        validate_report(doc)
        assert doc["frames"] == 14
        assert doc["latency_s"] < 68.4

    def test_cost_tables(self, tmp_path, capsys):
        out = tmp_path / "tables"
        assert main(["cost-tables", "--out", str(out)]) == 0
        step_csv = (out / "cost_step_table.csv").read_text()
        totals_csv = (out / "cost_totals_table.csv").read_text()
        assert step_csv.splitlines()[0].startswith("variant,per_step_t")
        assert len(totals_csv.splitlines()) == 1 + 9  # header + 3 variants x 3 rows
        validate_report(json.loads((out / "cost_tables.json").read_text()))

    def test_unknown_arch(self):
        assert main(["cost", "--arch", "does-not-exist"]) == 2


class TestMetricsCommand:
    def test_cosine(self, tmp_path, capsys):
        a = Rng(0).uniform(0.1, 1.0, (8,), np.float64)
        write_vten(tmp_path / "a.vten", a)
        write_vten(tmp_path / "b.vten", a)
        rc = main(["metrics", "cosine", "--in", str(tmp_path / "a.vten"),
                   "--ref", str(tmp_path / "b.vten")])
        assert rc == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["score"] == 1.0

    def test_dynamic_degree_multiple_inputs(self, tmp_path, capsys):
        still = np.zeros((1, 4, 4, 2))
        moving = np.full((1, 4, 4, 2), 8.0)
        write_vten(tmp_path / "still.vten", still.astype(np.float32))
        write_vten(tmp_path / "moving.vten", moving.astype(np.float32))
        rc = main(["metrics", "dynamic-degree", "--in",
                   str(tmp_path / "still.vten"), str(tmp_path / "moving.vten"),
                   "--theta", "1.0"])
        assert rc == 0
        assert json.loads(capsys.readouterr().out)["score"] == 0.5

    def test_missing_ref_is_argument_error(self, tmp_path):
        write_vten(tmp_path / "a.vten", np.ones((4,), np.float32))
        assert main(["metrics", "cosine", "--in", str(tmp_path / "a.vten")]) == 2

    def test_missing_file_is_io_error(self, tmp_path):
        assert main(["metrics", "cosine", "--in", str(tmp_path / "nope.vten"),
                     "--ref", str(tmp_path / "nope.vten")]) == 4


class TestEquivCheck:
    def test_clean_pass(self, capsys):
        assert main(["equiv-check", "--seeds", "10"]) == 0
        doc = json.loads(capsys.readouterr().out)
        validate_report(doc)
        assert doc["ok"] and len(doc["checks"]) == 3

    def test_f64_tightens_tolerance(self, capsys):
        assert main(["equiv-check", "--seeds", "5", "--dtype", "f64"]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["tolerance"] == 1e-12

    def test_poison_fold_fails_with_site_id(self, capsys):
        assert main(["equiv-check", "--seeds", "5", "--poison-fold"]) == 3
        doc = json.loads(capsys.readouterr().out)
        assert not doc["ok"]
        fold_check = doc["checks"][0]
        assert not fold_check["ok"]
        assert "sweep0" in fold_check["detail"]


class TestSweep:
    def test_rows_and_determinism(self, model_dir, tmp_path):
        args = [
            "sweep", "--weights", str(model_dir), "--modes", "baseline,vcut",
            "--cut-steps", "3", "--seeds", "0,1,2", "--steps", "4",
            "--height", "4", "--width", "4",
        ]
        out1, out2 = tmp_path / "s1", tmp_path / "s2"
        assert main(args + ["--out", str(out1)]) == 0
        assert main(args + ["--out", str(out2)]) == 0
        csv1 = (out1 / "sweep.csv").read_bytes()
        assert csv1 == (out2 / "sweep.csv").read_bytes()
        doc = json.loads((out1 / "sweep.json").read_text())
        validate_report(doc)
        rows = doc["rows"]
        assert len(rows) == 6
        baseline = [r for r in rows if r["mode"] == "baseline"]
        vcut_rows = [r for r in rows if r["mode"] == "vcut"]
        assert all(r["forward_passes"] == 8 for r in baseline)
        assert all(r["forward_passes"] == 6 for r in vcut_rows)

    def test_empty_seeds_rejected(self, model_dir, tmp_path):
        rc = main(["sweep", "--weights", str(model_dir), "--seeds", "",
                   "--out", str(tmp_path / "x")])
        assert rc == 2

    def test_threaded_matches_serial(self, model_dir, tmp_path):
        args = [
            "sweep", "--weights", str(model_dir), "--modes", "vcut",
            "--cut-steps", "2,3", "--seeds", "0,1", "--steps", "3",
            "--height", "4", "--width", "4",
        ]
        serial, threaded = tmp_path / "serial", tmp_path / "threaded"
        assert main(args + ["--out", str(serial)]) == 0
        assert main(args + ["--threads", "4", "--out", str(threaded)]) == 0
        assert (serial / "sweep.csv").read_bytes() == (threaded / "sweep.csv").read_bytes()
