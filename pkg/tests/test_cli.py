import csv
import json
import os

import numpy as np
import pytest

from plate.checkpoint import save_checkpoint
from plate.cli import main
from plate.numerics import SeededRng


def run_cli(*args):
    return main([str(a) for a in args])


def write_weight_checkpoint(path, matrix):
    save_checkpoint(str(path), tensors={"weight": matrix}, metadata={"kind": "raw"})


def dir_fingerprint(root):
    out = {}
    for base, _, files in os.walk(root):
        for name in sorted(files):
            p = os.path.join(base, name)
            rel = os.path.relpath(p, root)
            with open(p, "rb") as fh:
                out[rel] = fh.read()
    return out


def moons_config(tmp_path, methods, seeds, epochs=10, metrics=None):
    config = {
        "task": {"kind": "two_moons", "n_train": 64, "n_test": 64, "noise": 0.1,
                 "rotation_deg": 90.0, "translation": [0.0, 0.0]},
        "arch": {"hidden": [8, 8], "activation": "relu"},
        "stage1": {"epochs": epochs, "batch_size": 16, "learning_rate": 0.01},
        "stage2": {"epochs": epochs, "batch_size": 16, "learning_rate": 0.01},
        "methods": methods,
        "seeds": seeds,
    }
    if metrics:
        config["metrics"] = metrics
    path = tmp_path / "config.json"
    path.write_text(json.dumps(config))
    return str(path)


class TestBuildAdapter:
    def test_r_too_large_exits_3(self, tmp_path, capsys):
        write_weight_checkpoint(tmp_path / "w", np.eye(4))
        code = run_cli("build-adapter", "--weights", tmp_path / "w", "--r", 4,
                       "--tau", 0.6, "--out", tmp_path / "out")
        assert code == 3
        assert "selector leaves no frozen rows" in capsys.readouterr().err

    def test_duplicate_rows_listed_in_summary(self, tmp_path):
        gen = SeededRng(0).generator()
        unique = gen.standard_normal((4, 12))
        dup = gen.standard_normal(12)
        w = np.vstack([unique[:2], dup, unique[2:], dup * 3.0, dup * -0.5])
        # duplicates sit at rows 2, 5, 6
        write_weight_checkpoint(tmp_path / "w", w)
        code = run_cli("build-adapter", "--weights", tmp_path / "w", "--r", 3,
                       "--tau", 0.6, "--out", tmp_path / "out")
        assert code == 0
        summary = json.loads((tmp_path / "out" / "summary.json").read_text())
        assert set(summary["selected_indices"]) == {2, 5, 6}
        assert summary["k"] >= 1
        assert sum(summary["score_histogram"]["counts"]) == 7

    def test_bitwise_determinism(self, tmp_path):
        w = SeededRng(1).generator().standard_normal((16, 32))
        write_weight_checkpoint(tmp_path / "w", w)
        for name in ("a", "b"):
            code = run_cli("build-adapter", "--weights", tmp_path / "w", "--r", 4,
                           "--tau", 0.7, "--kmax", 8, "--seed", 5,
                           "--out", tmp_path / name)
            assert code == 0
        assert dir_fingerprint(tmp_path / "a") == dir_fingerprint(tmp_path / "b")

    def test_missing_weights_exits_2(self, tmp_path):
        code = run_cli("build-adapter", "--weights", tmp_path / "nope", "--r", 2,
                       "--tau", 0.5, "--out", tmp_path / "out")
        assert code == 2


class TestRunCommand:
    def test_minimal_run_csv(self, tmp_path):
        cfg = moons_config(tmp_path, [{"kind": "full"}], [0])
        out = tmp_path / "out"
        assert run_cli("run", "--config", cfg, "--out", out) == 0
        rows = list(csv.reader((out / "results.csv").open()))
        assert rows[0] == ["method", "r", "tau", "k", "seed", "trainable_params",
                           "acc1_base", "acc2", "acc1_after", "forgetting",
                           "epsilon", "lambda"]
        assert len(rows) == 2

    def test_grid_cardinality(self, tmp_path):
        cfg = moons_config(tmp_path, [{"kind": "full"}, {"kind": "frozen"}], [0, 1, 2])
        out = tmp_path / "out"
        assert run_cli("run", "--config", cfg, "--out", out) == 0
        rows = list(csv.reader((out / "results.csv").open()))
        assert len(rows) == 7

    def test_method_list_expansion(self, tmp_path):
        cfg = moons_config(tmp_path, [{"kind": "plate", "r": 2, "tau": [0.6, 0.9], "k_max": 8}], [0])
        out = tmp_path / "out"
        assert run_cli("sweep", "--config", cfg, "--out", out) == 0
        rows = list(csv.reader((out / "results.csv").open()))
        assert len(rows) == 3
        assert {r[2] for r in rows[1:]} == {"0.6", "0.9"}

    def test_csv_consistent_with_json(self, tmp_path):
        cfg = moons_config(tmp_path, [{"kind": "lora", "r": 2}], [0, 1])
        out = tmp_path / "out"
        assert run_cli("run", "--config", cfg, "--out", out) == 0
        payload = json.loads((out / "results.json").read_text())
        rows = list(csv.reader((out / "results.csv").open()))
        for row, rec in zip(rows[1:], payload["results"]):
            assert float(row[9]) == rec["forgetting"]
            assert abs(rec["forgetting"] - (rec["acc1_base"] - rec["acc1_after"])) < 1e-12

    def test_all_seeds_failing_exits_4(self, tmp_path):
        cfg = moons_config(tmp_path, [{"kind": "plate", "r": 8, "tau": 0.6, "k_max": 8}], [0, 1])
        out = tmp_path / "out"
        assert run_cli("run", "--config", cfg, "--out", out) == 4
        payload = json.loads((out / "results.json").read_text())
        assert len(payload["failures"]) == 2

    def test_unknown_key_exits_3(self, tmp_path):
        cfg_path = tmp_path / "config.json"
        cfg_path.write_text(json.dumps({"task": {"kind": "two_moons"}, "typo_key": 1}))
        assert run_cli("run", "--config", cfg_path, "--out", tmp_path / "out") == 3

    def test_malformed_json_exits_2(self, tmp_path):
        cfg_path = tmp_path / "config.json"
        cfg_path.write_text("{not json")
        assert run_cli("run", "--config", cfg_path, "--out", tmp_path / "out") == 2

    def test_thread_count_does_not_change_outputs(self, tmp_path):
        cfg = moons_config(tmp_path, [{"kind": "full"}, {"kind": "lora", "r": 2}], [0, 1])
        fingerprints = []
        for threads, name in (("1", "t1"), ("3", "t3")):
            os.environ["PLATE_THREADS"] = threads
            try:
                assert run_cli("run", "--config", cfg, "--out", tmp_path / name) == 0
            finally:
                del os.environ["PLATE_THREADS"]
            fp = dir_fingerprint(tmp_path / name)
            fp = {k: v for k, v in fp.items() if k != "results.json"}  # wall seconds differ
            fingerprints.append(fp)
        assert fingerprints[0] == fingerprints[1]


class TestHeatmap:
    def test_frozen_run_gives_zero_field(self, tmp_path):
        cfg = moons_config(tmp_path, [{"kind": "frozen"}], [0])
        out = tmp_path / "out"
        assert run_cli("run", "--config", cfg, "--out", out) == 0
        run_dir = out / "runs" / "frozen" / "seed0"
        csv_path = tmp_path / "field.csv"
        assert run_cli("heatmap", "--run", run_dir, "--grid", -2, 2, -2, 2, 5,
                       "--out", csv_path) == 0
        rows = list(csv.reader(csv_path.open()))
        assert rows[0] == ["x", "y", "delta"]
        assert len(rows) == 26
        assert all(float(r[2]) == 0.0 for r in rows[1:])

    def test_row_count(self, tmp_path):
        cfg = moons_config(tmp_path, [{"kind": "full"}], [0])
        out = tmp_path / "out"
        assert run_cli("run", "--config", cfg, "--out", out) == 0
        csv_path = tmp_path / "field.csv"
        assert run_cli("heatmap", "--run", out / "runs" / "full" / "seed0",
                       "--grid", -1, 1, -1, 1, 10, "--out", csv_path) == 0
        assert len(list(csv.reader(csv_path.open()))) == 101

    def test_non_2d_model_exits_3(self, tmp_path):
        config = {
            "task": {"kind": "rotated_regression", "d": 6, "alpha": 0.5,
                     "n_train": 64, "n_test": 64},
            "arch": {"hidden": [8], "activation": "tanh"},
            "stage1": {"epochs": 3, "batch_size": 16, "learning_rate": 0.01},
            "stage2": {"epochs": 3, "batch_size": 16, "learning_rate": 0.01},
            "methods": [{"kind": "full"}],
            "seeds": [0],
        }
        cfg_path = tmp_path / "config.json"
        cfg_path.write_text(json.dumps(config))
        out = tmp_path / "out"
        assert run_cli("run", "--config", cfg_path, "--out", out) == 0
        assert run_cli("heatmap", "--run", out / "runs" / "full" / "seed0",
                       "--grid", -1, 1, -1, 1, 4, "--out", tmp_path / "f.csv") == 3


class TestCurvature:
    def test_rho_zero_row_and_sidecar(self, tmp_path):
        cfg = moons_config(tmp_path, [{"kind": "plate", "r": 2, "tau": 0.6, "k_max": 8}], [0],
                           epochs=20)
        out = tmp_path / "out"
        assert run_cli("run", "--config", cfg, "--out", out) == 0
        csv_path = tmp_path / "curv.csv"
        assert run_cli("curvature", "--run", out / "runs" / "plate_r2_tau0.6" / "seed0",
                       "--family", "plate", "--rhos", "0,0.001,0.01",
                       "--out", csv_path) == 0
        rows = list(csv.reader(csv_path.open()))
        assert rows[1][0] == "0.0" and float(rows[1][1]) == 0.0
        sidecar = json.loads((str(csv_path) + ".json").read_text() if False else (tmp_path / "curv.csv.json").read_text())
        assert set(sidecar) >= {"family", "lambda", "epsilon", "beta", "quad_coeff"}
        assert sidecar["beta"] == 1.0

    def test_family_mismatch_exits_3(self, tmp_path):
        cfg = moons_config(tmp_path, [{"kind": "full"}], [0])
        out = tmp_path / "out"
        assert run_cli("run", "--config", cfg, "--out", out) == 0
        assert run_cli("curvature", "--run", out / "runs" / "full" / "seed0",
                       "--family", "plate", "--rhos", "0.01",
                       "--out", tmp_path / "c.csv") == 3

    def test_full_family_on_any_run(self, tmp_path):
        cfg = moons_config(tmp_path, [{"kind": "lora", "r": 2}], [0])
        out = tmp_path / "out"
        assert run_cli("run", "--config", cfg, "--out", out) == 0
        assert run_cli("curvature", "--run", out / "runs" / "lora_r2" / "seed0",
                       "--family", "full", "--rhos", "0.001,0.01",
                       "--out", tmp_path / "c.csv") == 0


class TestDeterminism:
    def test_repeat_run_bitwise_identical(self, tmp_path):
        cfg = moons_config(tmp_path, [{"kind": "plate", "r": 2, "tau": 0.8, "k_max": 8}], [0, 1])
        fps = []
        for name in ("r1", "r2"):
            assert run_cli("run", "--config", cfg, "--out", tmp_path / name) == 0
            fp = dir_fingerprint(tmp_path / name)
            fp.pop("results.json")  # wall-clock timings live here
            fps.append(fp)
        assert fps[0] == fps[1]
