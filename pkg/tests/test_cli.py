import csv
import io
import json
import subprocess
import sys

import numpy as np
import pytest

from vdkflow.cli import main


def run_json(capsys, *argv):
    assert main(list(argv)) == 0
    return json.loads(capsys.readouterr().out)


class TestCommands:
    def test_grid_dump(self, capsys):
        d = run_json(capsys, "grid", "dump", "--case", "case14")
        assert len(d["buses"]) == 14

    def test_acpf_solve_base(self, capsys):
        d = run_json(capsys, "acpf", "solve", "--case", "case14")
        sol = d["solutions"][0]
        assert sol["max_mismatch"] <= 1e-8
        assert d["bus_ids"][0] == 1

    def test_sample_then_solve(self, capsys, tmp_path):
        path = tmp_path / "s.json"
        assert main(["acpf", "sample", "--case", "case14", "--n", "3", "--target", "14", "--out", str(path)]) == 0
        data = json.loads(path.read_text())
        assert len(data["x"]) == 3 and len(data["v"]) == 3
        d = run_json(capsys, "acpf", "solve", "--case", "case14", "--samples", str(path))
        ids = d["bus_ids"]
        got = [s["v_mag"][ids.index(14)] for s in d["solutions"]]
        np.testing.assert_array_equal(got, data["v"])

    def test_kernel_build(self, capsys):
        d = run_json(capsys, "kernel", "build", "--case", "case118")
        assert len(d["active"]) == 97

    def test_gp_fit_predict(self, capsys, tmp_path):
        model = tmp_path / "m.json"
        data = tmp_path / "d.json"
        main(["gp", "fit", "--case", "case14", "--target", "14", "--n-train", "15", "--iters", "10",
              "--out", str(model)])
        main(["acpf", "sample", "--case", "case14", "--n", "5", "--target", "14", "--seed", "1",
              "--out", str(data)])
        assert "lml" in json.loads(model.read_text())
        d = run_json(capsys, "gp", "predict", "--model", str(model), "--data", str(data))
        assert len(d["mean"]) == 5 and d["metrics"]["mae"] < 0.01

    def test_al_run(self, capsys):
        d = run_json(capsys, "al", "run", "--case", "case14", "--target", "14", "--budget", "3",
                     "--batch", "5", "--swipes", "1")
        assert len(d["records"]) == 2 and d["target_id"] == 14

    def test_bench_trials_config(self, capsys, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"case": "case14", "target": 14, "n_train": 10, "n_test": 10,
                                   "n_trials": 2, "iters": 5, "methods": ["vdk_gp"]}))
        assert main(["bench", "trials", "--config", str(cfg)]) == 0
        rows = list(csv.reader(io.StringIO(capsys.readouterr().out)))
        assert rows[0][:2] == ["trial", "method"] and len(rows) == 3

    def test_bench_depth(self, capsys):
        d = run_json(capsys, "bench", "depth", "--case", "case14", "--target", "14", "--n-train", "10",
                     "--n-test", "10", "--iters", "5", "--depths", "1", "2")
        assert [r["depth"] for r in d["rows"]] == [1, 2]

    def test_bench_uq_and_extrapolate(self, capsys):
        common = ["--case", "case14", "--target", "14", "--n-train", "15", "--n-test", "30", "--iters", "5"]
        d = run_json(capsys, "bench", "uq", *common)
        assert set(d["results"]) == {"normal", "beta", "combined"}
        d = run_json(capsys, "bench", "extrapolate", *common, "--test-fractions", "0.1", "0.2")
        assert [r["fraction"] for r in d["rows"]] == [0.1, 0.2]

    def test_config_sets_leaf_defaults(self, capsys, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"case": "case14", "n": 2}))
        d = run_json(capsys, "acpf", "sample", "--config", str(cfg))
        assert len(d["x"]) == 2
        d = run_json(capsys, "acpf", "sample", "--config", str(cfg), "--n", "4")
        assert len(d["x"]) == 4


class TestErrors:
    def test_unknown_bus(self, capsys):
        assert main(["gp", "fit", "--case", "case14", "--target", "99"]) == 1
        err = json.loads(capsys.readouterr().err)
        assert err["error"] == "IndexOutOfRange"

    def test_missing_file(self, capsys):
        assert main(["grid", "dump", "--case", "/nonexistent/case.m"]) == 1
        assert "error" in json.loads(capsys.readouterr().err)

    def test_unknown_config_key(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"bogus": 1}))
        with pytest.raises(SystemExit):
            main(["acpf", "sample", "--config", str(cfg)])

    def test_entry_point(self):
        r = subprocess.run([sys.executable, "-m", "vdkflow.cli", "grid", "dump", "--case", "case14"],
                           capture_output=True, text=True, check=True)
        assert json.loads(r.stdout)["base_mva"] == 100
