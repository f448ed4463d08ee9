import json
from pathlib import Path

import numpy as np
import pytest

from surge_al.cli import (
    CheckpointError,
    compare_curves,
    load_checkpoint,
    main,
    read_curve,
    save_checkpoint,
)
from surge_al.pump_data import fit_scaler

TINY_RUN = ["--n", "200", "--initial", "20", "--k", "10", "--iterations", "2",
            "--members", "2", "--hidden", "8,8", "--epochs", "3", "--batch-size", "16"]


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert main(["run", "--seeds", "1,2,3", "--out-dir", str(out), *TINY_RUN]) == 0
    return out


class TestGenerate:
    def test_line_count_and_determinism(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        assert main(["generate", "--n", "5000", "--seed", "1", "--out", str(a)]) == 0
        assert main(["generate", "--n", "5000", "--seed", "1", "--out", str(b)]) == 0
        assert len(a.read_bytes().splitlines()) == 5001
        assert a.read_bytes() == b.read_bytes()

    def test_seed_changes_output(self, tmp_path):
        main(["generate", "--n", "10", "--seed", "1", "--out", str(tmp_path / "a.csv")])
        main(["generate", "--n", "10", "--seed", "2", "--out", str(tmp_path / "b.csv")])
        assert (tmp_path / "a.csv").read_bytes() != (tmp_path / "b.csv").read_bytes()

    def test_zero_samples(self, tmp_path, capsys):
        assert main(["generate", "--n", "0", "--out", str(tmp_path / "x.csv")]) == 2
        assert not (tmp_path / "x.csv").exists()

    def test_env_out_dir(self, tmp_path, monkeypatch):
        monkeypatch.setenv("SURGE_AL_OUT_DIR", str(tmp_path / "env"))
        assert main(["generate", "--n", "5"]) == 0
        assert (tmp_path / "env" / "data.csv").exists()

    def test_flag_beats_env(self, tmp_path, monkeypatch):
        monkeypatch.setenv("SURGE_AL_OUT_DIR", str(tmp_path / "env"))
        assert main(["generate", "--n", "5", "--out-dir", str(tmp_path / "flag")]) == 0
        assert (tmp_path / "flag" / "data.csv").exists()
        assert not (tmp_path / "env").exists()

    def test_unwritable(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("")
        assert main(["generate", "--n", "5", "--out", str(blocker / "x.csv")]) == 1

    def test_help_mentions_env(self, capsys):
        assert main(["--help"]) == 0
        assert "SURGE_AL_OUT_DIR" in capsys.readouterr().out


class TestConfigFile:
    def test_values_and_flag_precedence(self, tmp_path):
        cfg = tmp_path / "c.ini"
        cfg.write_text("[surge_al]\nn = 7\nseed = 3\nout = data.csv\n")
        assert main(["generate", "--config", str(cfg)]) == 0
        assert len((tmp_path / "data.csv").read_text().splitlines()) == 8
        assert main(["generate", "--config", str(cfg), "--n", "4"]) == 0
        assert len((tmp_path / "data.csv").read_text().splitlines()) == 5

    def test_sectionless(self, tmp_path):
        cfg = tmp_path / "c.ini"
        cfg.write_text("n = 3\n")
        assert main(["generate", "--config", str(cfg), "--out", str(tmp_path / "d.csv")]) == 0
        assert len((tmp_path / "d.csv").read_text().splitlines()) == 4

    def test_unknown_key(self, tmp_path):
        cfg = tmp_path / "c.ini"
        cfg.write_text("[surge_al]\nbogus = 1\n")
        assert main(["generate", "--config", str(cfg)]) == 2

    def test_missing_file(self, tmp_path):
        assert main(["generate", "--config", str(tmp_path / "nope.ini")]) == 2


class TestRun:
    def test_cross_product(self, run_dir):
        curves = sorted(p.name for p in (run_dir / "curves").glob("*.csv"))
        assert curves == [f"{s}_seed{i}.csv" for s in ("random", "top_variance") for i in (1, 2, 3)]

    def test_curve_layout(self, run_dir):
        text = (run_dir / "curves" / "top_variance_seed1.csv").read_text().splitlines()
        assert text[0] == "iteration,train_size,rmse,r2,mape_pct,max_error,acceptance_pct,mean_pool_variance"
        assert len(text) == 1 + 3
        c = read_curve(run_dir / "curves" / "top_variance_seed1.csv")
        assert list(c["train_size"]) == [20, 30, 40]

    def test_manifest_files_exist(self, run_dir):
        manifest = json.loads((run_dir / "manifest.json").read_text())
        assert len(manifest["runs"]) == 6
        for run in manifest["runs"]:
            for key in ("curve", "selected", "checkpoint"):
                assert Path(run[key]).exists()

    def test_rerun_identical(self, run_dir, tmp_path):
        assert main(["run", "--seeds", "1,2,3", "--out-dir", str(tmp_path), *TINY_RUN]) == 0
        for p in (run_dir / "curves").glob("*.csv"):
            assert p.read_bytes() == (tmp_path / "curves" / p.name).read_bytes()

    def test_infeasible_config_does_not_train(self, tmp_path):
        code = main(["run", "--out-dir", str(tmp_path), "--n", "50", "--initial", "20",
                     "--k", "50", "--iterations", "3"])
        assert code == 2
        assert not (tmp_path / "curves").exists()

    def test_bad_strategy(self, tmp_path):
        assert main(["run", "--out-dir", str(tmp_path), "--strategies", "greedy", *TINY_RUN]) == 2

    def test_csv_input(self, tmp_path):
        data = tmp_path / "d.csv"
        main(["generate", "--n", "200", "--seed", "4", "--out", str(data)])
        args = ["run", "--data", str(data), "--strategies", "random", *TINY_RUN[2:]]
        assert main([*args, "--out-dir", str(tmp_path / "o")]) == 0
        manifest = json.loads((tmp_path / "o" / "manifest.json").read_text())
        assert manifest["data"]["csv"] == str(data)


class TestCheckpoint:
    def test_round_trip_bit_exact(self, run_dir, tmp_path):
        ens, scaler, meta = load_checkpoint(run_dir / "checkpoints" / "random_seed2.npz")
        path = tmp_path / "c.npz"
        save_checkpoint(path, ens, scaler, meta["extra"])
        ens2, scaler2, meta2 = load_checkpoint(path)
        assert ens2.member_seeds == ens.member_seeds
        for a, b in zip(ens.members, ens2.members):
            assert a.arch == b.arch and np.array_equal(a.theta, b.theta)
        assert scaler2.fingerprint() == scaler.fingerprint()
        assert meta2 == meta
        assert meta2["extra"]["strategy"] == "random"

    def test_truncated(self, run_dir, tmp_path):
        bad = tmp_path / "bad.npz"
        bad.write_bytes((run_dir / "checkpoints" / "random_seed1.npz").read_bytes()[:200])
        with pytest.raises(CheckpointError):
            load_checkpoint(bad)
        data = run_dir / "d.csv"
        main(["generate", "--n", "20", "--out", str(data)])
        assert main(["evaluate", "--checkpoint", str(bad), "--data", str(data),
                     "--out", str(tmp_path / "e.json")]) == 1

    def test_scaler_mismatch(self, run_dir, tmp_path):
        ens, scaler, meta = load_checkpoint(run_dir / "checkpoints" / "random_seed1.npz")
        X = np.random.default_rng(0).normal(size=(10, 5))
        other = fit_scaler(X, X[:, 0], range(10))
        save_checkpoint(tmp_path / "m.npz", ens, other, meta["extra"])
        with pytest.raises(CheckpointError, match="scaler"):
            load_checkpoint(tmp_path / "m.npz")


class TestEvaluate:
    def test_overfit_toy_run_near_perfect(self, tmp_path):
        data = tmp_path / "d.csv"
        main(["generate", "--n", "50", "--seed", "2", "--noise-scale", "0", "--out", str(data)])
        out = tmp_path / "o"
        assert main(["run", "--data", str(data), "--out-dir", str(out), "--strategies", "random",
                     "--seeds", "0", "--test-fraction", "0.1", "--initial", "40", "--k", "5",
                     "--iterations", "1", "--members", "2", "--hidden", "64,64",
                     "--epochs", "3000", "--batch-size", "15", "--decay-start", "2000",
                     "--decay-factor", "0.995"]) == 0
        ck = out / "checkpoints" / "random_seed0.npz"
        _, _, meta = load_checkpoint(ck)
        test = set(meta["extra"]["test_idx"])
        lines = data.read_text().splitlines()
        train_csv = tmp_path / "train.csv"
        train_csv.write_text("\n".join([lines[0]] + [l for i, l in enumerate(lines[1:]) if i not in test]) + "\n")
        report = tmp_path / "r.json"
        assert main(["evaluate", "--checkpoint", str(ck), "--data", str(train_csv),
                     "--out", str(report)]) == 0
        rep = json.loads(report.read_text())
        assert rep["n"] == 45
        assert rep["acceptance_accuracy_pct"] >= 95.0
        assert rep["r2"] > 0.999

    def test_identical_json(self, run_dir, tmp_path):
        data = tmp_path / "d.csv"
        main(["generate", "--n", "30", "--seed", "8", "--out", str(data)])
        ck = run_dir / "checkpoints" / "top_variance_seed3.npz"
        for name in ("a.json", "b.json"):
            assert main(["evaluate", "--checkpoint", str(ck), "--data", str(data),
                         "--out", str(tmp_path / name)]) == 0
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


class TestCompare:
    def test_self_delta_zero(self, run_dir, tmp_path):
        p = run_dir / "curves" / "top_variance_seed1.csv"
        out = tmp_path / "c.csv"
        assert main(["compare", f"a={p}", f"b={p}", "--out", str(out)]) == 0
        rows = out.read_text().splitlines()
        assert rows[0].endswith("delta_a_minus_b")
        assert all(float(r.split(",")[-1]) == 0.0 for r in rows[1:])

    def test_seed_aggregation(self, run_dir, tmp_path):
        files = sorted(str(p) for p in (run_dir / "curves").glob("*.csv"))
        budgets, labels, table = compare_curves(files)
        assert list(budgets) == [20, 30, 40]
        assert sorted(labels) == ["random", "top_variance"]
        vals = np.array([read_curve(run_dir / "curves" / f"random_seed{s}.csv")["rmse"]
                         for s in (1, 2, 3)])
        np.testing.assert_array_equal(table["random"][0], vals.mean(axis=0))
        np.testing.assert_allclose(table["random"][1], vals.std(axis=0, ddof=1), rtol=1e-15)
        assert table["random"][2] == 3
        out = tmp_path / "c.csv"
        assert main(["compare", *files, "--out", str(out)]) == 0
        assert "delta_top_variance_minus_random" in out.read_text().splitlines()[0]

    def test_intersection_ascending(self, run_dir, tmp_path):
        src = (run_dir / "curves" / "random_seed1.csv").read_text().splitlines()
        # keep budgets 40 and 20 in reverse order
        clipped = tmp_path / "clip.csv"
        clipped.write_text("\n".join([src[0], src[3], src[1]]) + "\n")
        budgets, _, _ = compare_curves([str(run_dir / "curves" / "random_seed1.csv"),
                                        f"x={clipped}"])
        assert list(budgets) == [20, 40]

    def test_disjoint_grids(self, run_dir, tmp_path, capsys):
        src = (run_dir / "curves" / "random_seed1.csv").read_text().splitlines()
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        a.write_text("\n".join([src[0], src[1]]) + "\n")
        b.write_text("\n".join([src[0], src[2]]) + "\n")
        assert main(["compare", f"a={a}", f"b={b}", "--out", str(tmp_path / "c.csv")]) == 2
        err = capsys.readouterr().err
        assert "[20]" in err and "[30]" in err
