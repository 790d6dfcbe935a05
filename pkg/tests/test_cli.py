"""End-to-end CLI checks on small datasets."""

import json

import pytest

from lidann.cli import SWEEP_COLUMNS, main


def _gen(tmp_path, n=1200, dim=16, d=4, seed=3, queries=40, extra=()):
    args = [
        "gen", "--kind", "uniform-ball", "--n", str(n), "--dim", str(dim),
        "--intrinsic-dim", str(d), "--seed", str(seed),
        "--queries", str(queries), "--k", "10", "--out-dir", str(tmp_path / "data"),
    ] + list(extra)
    assert main(args) == 0
    return tmp_path / "data"


def _build(tmp_path, data, extra=()):
    idx = tmp_path / "idx.mcgi"
    args = [
        "build", "--base", str(data / "base.fvecs"), "--out", str(idx),
        "--R", "16", "--L-build", "32", "--k-lid", "12", "--seed", "1",
    ] + list(extra)
    assert main(args) == 0
    return idx


class TestGen:
    def test_produces_three_files(self, tmp_path):
        data = _gen(tmp_path)
        for name in ("base.fvecs", "query.fvecs", "gt.ivecs"):
            assert (data / name).exists()

    def test_regeneration_is_byte_identical(self, tmp_path):
        a = _gen(tmp_path / "a")
        b = _gen(tmp_path / "b")
        for name in ("base.fvecs", "query.fvecs", "gt.ivecs"):
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_bad_intrinsic_dim_fails(self, tmp_path, capsys):
        rc = main([
            "gen", "--kind", "uniform-ball", "--n", "10", "--dim", "8",
            "--intrinsic-dim", "100", "--out-dir", str(tmp_path),
        ])
        assert rc == 2
        assert "error" in capsys.readouterr().err


class TestBuild:
    def test_adaptive_build_writes_index_and_profile(self, tmp_path, capsys):
        data = _gen(tmp_path)
        idx = _build(tmp_path, data)
        out = capsys.readouterr().out
        assert idx.exists()
        assert (tmp_path / "idx.mcgi.lid").exists()
        assert "LID profile: mu=" in out
        report = json.loads(out[out.index("{"):])
        assert report["mode"] == "adaptive"
        assert "alpha_histogram" in report and "build_seconds" in report
        # mu/sigma mirror the summary-table style: one decimal
        assert report["lid_mu"] == round(report["lid_mu"], 1)

    def test_fixed_alpha_differs_from_adaptive_on_mixed_data(self, tmp_path):
        data = tmp_path / "data"
        args = [
            "gen", "--kind", "mixed-lid", "--n", "1000", "--dim", "24",
            "--intrinsic-dim", "2", "--intrinsic-dim-2", "10",
            "--seed", "5", "--queries", "10", "--k", "10", "--out-dir", str(data),
        ]
        assert main(args) == 0
        a = _build(tmp_path, data)
        a_bytes = a.read_bytes()
        b = _build(tmp_path, data, extra=["--fixed-alpha", "1.2"])
        assert a_bytes != b.read_bytes()

    def test_invalid_alpha_range(self, tmp_path, capsys):
        data = _gen(tmp_path)
        rc = main([
            "build", "--base", str(data / "base.fvecs"), "--out", str(tmp_path / "x.mcgi"),
            "--alpha-min", "1.5", "--alpha-max", "1.0",
        ])
        assert rc == 2

    def test_degenerate_range_falls_back_to_uniform(self, tmp_path, capsys):
        data = _gen(tmp_path)
        idx = _build(tmp_path, data, extra=["--alpha-min", "1.2", "--alpha-max", "1.2"])
        out = capsys.readouterr().out
        report = json.loads(out[out.index("{"):])
        assert "fixed-alpha 1.2" in report["mode"]


class TestSweep:
    def test_csv_schema_and_monotone_recall(self, tmp_path, capsys):
        data = _gen(tmp_path)
        idx = _build(tmp_path, data)
        capsys.readouterr()
        rc = main([
            "sweep", "--index", str(idx), "--queries", str(data / "query.fvecs"),
            "--gt", str(data / "gt.ivecs"), "--L-list", "10,20,40",
            "--out", str(tmp_path / "sweep.csv"),
        ])
        assert rc == 0
        lines = (tmp_path / "sweep.csv").read_text().strip().splitlines()
        assert lines[0] == ",".join(SWEEP_COLUMNS)
        rows = [dict(zip(SWEEP_COLUMNS, map(float, ln.split(",")))) for ln in lines[1:]]
        assert [r["L"] for r in rows] == [10.0, 20.0, 40.0]
        recalls = [r["recall_at_10"] for r in rows]
        assert recalls == sorted(recalls)
        for r in rows:
            assert 0.0 <= r["recall_at_10"] <= 1.0
            assert r["mean_latency_ms"] > 0
            # single-thread sanity: QPS x mean latency ~ 1000
            assert r["qps"] * r["mean_latency_ms"] == pytest.approx(1000.0, rel=0.25)

    def test_adaptive_sweep_runs(self, tmp_path, capsys):
        data = _gen(tmp_path)
        idx = _build(tmp_path, data)
        rc = main([
            "sweep", "--index", str(idx), "--queries", str(data / "query.fvecs"),
            "--gt", str(data / "gt.ivecs"), "--L-list", "10", "--adaptive",
            "--lambda", "0.3", "--beam-max", "100",
        ])
        assert rc == 0

    def test_threads_mode_runs(self, tmp_path):
        data = _gen(tmp_path)
        idx = _build(tmp_path, data)
        rc = main([
            "sweep", "--index", str(idx), "--queries", str(data / "query.fvecs"),
            "--gt", str(data / "gt.ivecs"), "--L-list", "10", "--threads", "4",
        ])
        assert rc == 0

    def test_missing_ground_truth(self, tmp_path, capsys):
        data = _gen(tmp_path)
        idx = _build(tmp_path, data)
        rc = main([
            "sweep", "--index", str(idx), "--queries", str(data / "query.fvecs"),
            "--gt", str(tmp_path / "nope.ivecs"),
        ])
        assert rc == 2


class TestVerify:
    def test_small_pass(self, tmp_path, capsys):
        rc = main(["verify", "--n", "60", "--dim", "6", "--seeds", "2",
                   "--L-build", "40"])
        assert rc == 0
        out = capsys.readouterr().out
        assert "2/2 seeds passed" in out
        assert "FAIL" not in out

    def test_oversized_n_refused(self, capsys):
        rc = main(["verify", "--n", "600", "--seeds", "1"])
        assert rc == 2
        assert "500" in capsys.readouterr().out

    def test_capped_caveat_path(self, capsys):
        rc = main(["verify", "--n", "60", "--dim", "6", "--seeds", "1",
                   "--L-build", "40", "--capped-R", "2"])
        assert rc == 0  # caveats are reported, not failures


class TestLidStats:
    def test_summary_and_csv(self, tmp_path, capsys):
        data = _gen(tmp_path, n=500, d=8, dim=16)
        rc = main(["lid-stats", "--base", str(data / "base.fvecs"),
                   "--k-lid", "16", "--out-csv", str(tmp_path / "lids.csv")])
        assert rc == 0
        out = capsys.readouterr().out
        assert "mu=" in out and "sigma=" in out
        rows = (tmp_path / "lids.csv").read_text().strip().splitlines()
        assert len(rows) == 501  # header + one row per node


class TestRoutingDifficulty:
    def test_direction_on_tiny_run(self, capsys):
        rc = main(["routing-difficulty", "--dims", "2,12", "--n", "250",
                   "--trials", "40", "--seed", "11"])
        assert rc == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert lines[0] == "d,success_rate,mean_distance_evals"
        d2 = lines[1].split(",")
        d12 = lines[2].split(",")
        assert float(d2[1]) >= float(d12[1])
