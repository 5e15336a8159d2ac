"""End-to-end tests of the command-line surface and its exit codes."""

import json
import os

import numpy as np
import pytest

from rescale_tsp.cli import BudgetSpec, main, thread_count
from rescale_tsp.gcn import (
    ModelWeights,
    heatmap_from_csv,
    inverse_distance_heatmap,
    save_weights,
)
from rescale_tsp.instances import (
    Instance,
    Metric,
    held_karp_optimal,
    load_instance,
    load_labeled,
    save_labeled,
    serialize_tsplib,
    tour_length,
)
from rescale_tsp.metrics import average_rank, missing_rate
from rescale_tsp.subgraph import build_knn

pytestmark = pytest.mark.usefixtures("clear_threads_env")


@pytest.fixture
def clear_threads_env(monkeypatch):
    monkeypatch.delenv("RESCALE_TSP_THREADS", raising=False)


def run_gen(tmp_path, n=10, count=3, seed=1):
    out = tmp_path / "inst"
    assert main(
        ["gen", "--n", str(n), "--count", str(count), "--seed", str(seed),
         "--out", str(out)]
    ) == 0
    return out


def strip_timing(payload):
    clean = dict(payload)
    clean["results"] = []
    for row in payload["results"]:
        row = {k: v for k, v in row.items() if k not in ("wall_ms", "trace")}
        clean["results"].append(row)
    return clean


class TestBudgetSpec:
    def test_iters(self):
        spec = BudgetSpec("iters:500")
        b = spec.resolve(10)
        assert b.kind == "iters" and b.value == 500
        assert spec.resolve(1000).value == 500

    def test_wall_fixed(self):
        b = BudgetSpec("wall:5").resolve(77)
        assert b.kind == "wall" and b.value == 5.0

    def test_wall_per_node(self):
        spec = BudgetSpec("wall:0.05n")
        assert spec.resolve(100).value == pytest.approx(5.0)
        assert spec.resolve(20).value == pytest.approx(1.0)

    @pytest.mark.parametrize(
        "text",
        ["iters:0", "iters:-3", "iters:2.5", "wall:0", "wall:-1",
         "wall:abc", "300", "steps:5", "wall:", "iters:"],
    )
    def test_rejects(self, text):
        with pytest.raises(ValueError):
            BudgetSpec(text)


class TestThreadCount:
    def test_flag_wins(self, monkeypatch):
        monkeypatch.setenv("RESCALE_TSP_THREADS", "7")
        assert thread_count(4) == 4

    def test_env_fallback(self, monkeypatch):
        monkeypatch.setenv("RESCALE_TSP_THREADS", "3")
        assert thread_count(None) == 3

    def test_default_positive(self):
        assert thread_count(None) >= 1

    def test_invalid(self, monkeypatch):
        with pytest.raises(ValueError):
            thread_count(0)
        monkeypatch.setenv("RESCALE_TSP_THREADS", "zero")
        with pytest.raises(ValueError):
            thread_count(None)
        monkeypatch.setenv("RESCALE_TSP_THREADS", "0")
        with pytest.raises(ValueError):
            thread_count(None)


class TestGen:
    def test_writes_deterministic_files(self, tmp_path):
        out = run_gen(tmp_path, n=10, count=3, seed=1)
        names = sorted(os.listdir(out))
        assert names == [f"uniform-n10-s1-{i:04d}.txt" for i in range(3)]
        first = {nm: (out / nm).read_bytes() for nm in names}
        assert main(
            ["gen", "--n", "10", "--count", "3", "--seed", "1",
             "--out", str(out)]
        ) == 0
        assert {nm: (out / nm).read_bytes() for nm in names} == first
        inst = load_instance(str(out / names[0]))
        assert inst.n == 10
        assert inst.id == "uniform-n10-s1-0000"

    def test_distinct_instances_per_index(self, tmp_path):
        out = run_gen(tmp_path, n=10, count=2, seed=5)
        a = load_instance(str(out / "uniform-n10-s5-0000.txt"))
        b = load_instance(str(out / "uniform-n10-s5-0001.txt"))
        assert not np.array_equal(a.coords, b.coords)

    def test_argument_errors(self, tmp_path, capsys):
        assert main(["gen", "--n", "2", "--count", "1",
                     "--out", str(tmp_path / "x")]) == 2
        assert "at least 3" in capsys.readouterr().err
        assert main(["gen", "--n", "10", "--count", "0",
                     "--out", str(tmp_path / "x")]) == 2

    def test_out_path_is_a_file(self, tmp_path):
        blocker = tmp_path / "blocked"
        blocker.write_text("x")
        assert main(["gen", "--n", "10", "--count", "1",
                     "--out", str(blocker)]) == 2


class TestHeatmap:
    def test_fallback_warns_and_writes(self, tmp_path, capsys):
        inst_dir = run_gen(tmp_path, n=12, count=2)
        out = tmp_path / "hm"
        assert main(["heatmap", "--instances", str(inst_dir),
                     "--out", str(out)]) == 0
        captured = capsys.readouterr()
        assert "warning" in captured.err
        assert "inverse-distance" in captured.err
        files = sorted(os.listdir(out))
        assert files == [
            f"uniform-n12-s1-{i:04d}.heatmap.csv" for i in range(2)
        ]
        body = (out / files[0]).read_text().strip().split("\n")
        assert body[0] == "i,j,heat"
        assert len(body) - 1 == 12 * 11

    def test_fallback_matches_library_call(self, tmp_path):
        inst_dir = run_gen(tmp_path, n=10, count=1)
        out = tmp_path / "hm"
        main(["heatmap", "--instances", str(inst_dir), "--out", str(out)])
        inst = load_instance(str(inst_dir / "uniform-n10-s1-0000.txt"))
        hm = heatmap_from_csv(
            str(out / "uniform-n10-s1-0000.heatmap.csv"), 10
        )
        ref = inverse_distance_heatmap(build_knn(inst))
        np.testing.assert_array_equal(hm.neighbors, ref.neighbors)
        np.testing.assert_allclose(hm.values, ref.values, rtol=1e-10)

    def test_with_weights(self, tmp_path, capsys):
        inst_dir = run_gen(tmp_path, n=12, count=1)
        wpath = tmp_path / "w.rsgc"
        save_weights(ModelWeights.random(l=2, h=8, seed=3), str(wpath))
        out = tmp_path / "hm"
        assert main(["heatmap", "--instances", str(inst_dir),
                     "--weights", str(wpath), "--out", str(out)]) == 0
        assert "warning" not in capsys.readouterr().err
        hm = heatmap_from_csv(
            str(out / "uniform-n12-s1-0000.heatmap.csv"), 12
        )
        body = hm.values[:, 1:]
        assert np.all(body > 0.0) and np.all(body < 1.0)

    def test_bad_weight_file(self, tmp_path, capsys):
        inst_dir = run_gen(tmp_path, n=10, count=1)
        wpath = tmp_path / "w.rsgc"
        wpath.write_bytes(b"not a weight file at all")
        assert main(["heatmap", "--instances", str(inst_dir),
                     "--weights", str(wpath),
                     "--out", str(tmp_path / "hm")]) == 3
        assert "error" in capsys.readouterr().err

    def test_k1_flag(self, tmp_path):
        inst_dir = run_gen(tmp_path, n=12, count=1)
        out = tmp_path / "hm"
        assert main(["heatmap", "--instances", str(inst_dir),
                     "--k1", "5", "--out", str(out)]) == 0
        body = (out / "uniform-n12-s1-0000.heatmap.csv").read_text()
        assert len(body.strip().split("\n")) - 1 == 12 * 4
        assert main(["heatmap", "--instances", str(inst_dir),
                     "--k1", "1", "--out", str(out)]) == 2

    def test_missing_instance_path(self, tmp_path):
        assert main(["heatmap", "--instances", str(tmp_path / "nope"),
                     "--out", str(tmp_path / "hm")]) == 2


class TestSolve:
    def test_idempotent_given_iters(self, tmp_path):
        inst_dir = run_gen(tmp_path, n=12, count=3)
        out_a = tmp_path / "a.json"
        out_b = tmp_path / "b.json"
        args = ["solve", "--instances", str(inst_dir),
                "--budget", "iters:200", "--seed", "9"]
        assert main(args + ["--out", str(out_a)]) == 0
        assert main(args + ["--out", str(out_b)]) == 0
        a = json.loads(out_a.read_text())
        b = json.loads(out_b.read_text())
        assert strip_timing(a) == strip_timing(b)
        assert a["candidates"] == "knn"
        assert len(a["results"]) == 3
        row = a["results"][0]
        assert row["iterations"] == 200
        assert row["id"] == "uniform-n12-s1-0000"

    def test_thread_count_invariant(self, tmp_path):
        inst_dir = run_gen(tmp_path, n=12, count=4)
        outs = []
        for t in ("1", "2"):
            out = tmp_path / f"t{t}.json"
            assert main(["solve", "--instances", str(inst_dir),
                         "--budget", "iters:150", "--seed", "2",
                         "--threads", t, "--out", str(out)]) == 0
            outs.append(strip_timing(json.loads(out.read_text())))
        assert outs[0] == outs[1]

    def test_heatmap_candidates(self, tmp_path):
        inst_dir = run_gen(tmp_path, n=12, count=2)
        hm_dir = tmp_path / "hm"
        main(["heatmap", "--instances", str(inst_dir), "--out", str(hm_dir)])
        out = tmp_path / "r.json"
        assert main(["solve", "--instances", str(inst_dir),
                     "--heatmaps", str(hm_dir), "--budget", "iters:100",
                     "--out", str(out)]) == 0
        data = json.loads(out.read_text())
        assert data["candidates"] == "heatmap"
        assert all(r["candidate_mode"] == "heatmap" for r in data["results"])

    def test_knn_flag_overrides_heatmaps(self, tmp_path):
        inst_dir = run_gen(tmp_path, n=12, count=1)
        hm_dir = tmp_path / "hm"
        main(["heatmap", "--instances", str(inst_dir), "--out", str(hm_dir)])
        out = tmp_path / "r.json"
        assert main(["solve", "--instances", str(inst_dir),
                     "--heatmaps", str(hm_dir), "--candidates", "knn",
                     "--budget", "iters:50", "--out", str(out)]) == 0
        data = json.loads(out.read_text())
        assert data["candidates"] == "knn"

    def test_argument_errors(self, tmp_path, capsys):
        inst_dir = run_gen(tmp_path, n=10, count=1)
        assert main(["solve", "--instances", str(inst_dir),
                     "--budget", "iters:0"]) == 2
        assert main(["solve", "--instances", str(inst_dir),
                     "--budget", "nonsense"]) == 2
        assert main(["solve", "--instances", str(inst_dir),
                     "--candidates", "heatmap",
                     "--budget", "iters:10"]) == 2
        capsys.readouterr()

    def test_budget_validated_before_output(self, tmp_path):
        inst_dir = run_gen(tmp_path, n=10, count=1)
        out = tmp_path / "never.json"
        assert main(["solve", "--instances", str(inst_dir),
                     "--budget", "iters:0", "--out", str(out)]) == 2
        assert not out.exists()

    def test_missing_heatmap_file(self, tmp_path, capsys):
        inst_dir = run_gen(tmp_path, n=12, count=2)
        hm_dir = tmp_path / "hm"
        main(["heatmap", "--instances", str(inst_dir), "--out", str(hm_dir)])
        os.remove(hm_dir / "uniform-n12-s1-0001.heatmap.csv")
        assert main(["solve", "--instances", str(inst_dir),
                     "--heatmaps", str(hm_dir),
                     "--budget", "iters:10"]) == 3
        assert "no heatmap file" in capsys.readouterr().err

    def test_mismatched_heatmap(self, tmp_path):
        small = run_gen(tmp_path, n=10, count=1)
        big_dir = tmp_path / "big"
        main(["gen", "--n", "14", "--count", "1", "--seed", "1",
              "--out", str(big_dir)])
        hm_dir = tmp_path / "hm"
        main(["heatmap", "--instances", str(big_dir), "--out", str(hm_dir)])
        os.rename(
            hm_dir / "uniform-n14-s1-0000.heatmap.csv",
            hm_dir / "uniform-n10-s1-0000.heatmap.csv",
        )
        assert main(["solve", "--instances", str(small),
                     "--heatmaps", str(hm_dir),
                     "--budget", "iters:10"]) == 3

    def test_emit_labeled(self, tmp_path):
        inst_dir = run_gen(tmp_path, n=10, count=2)
        out = tmp_path / "r.json"
        lab_path = tmp_path / "solved.labeled.txt"
        assert main(["solve", "--instances", str(inst_dir),
                     "--budget", "iters:400", "--out", str(out),
                     "--emit-labeled", str(lab_path)]) == 0
        records = load_labeled(str(lab_path))
        results = json.loads(out.read_text())["results"]
        assert len(records) == 2
        for rec, row in zip(records, results):
            np.testing.assert_allclose(
                tour_length(rec.instance, rec.tour), row["length"],
                rtol=1e-9,
            )

    def test_tsplib_instance(self, tmp_path):
        rng = np.random.default_rng(3)
        raw = rng.integers(0, 500, size=(9, 2)).astype(float)
        inst = Instance.from_raw("nine", raw, Metric.TSPLIB_EUC2D_ROUNDED)
        path = tmp_path / "nine.tsp"
        path.write_text(serialize_tsplib(inst))
        out = tmp_path / "r.json"
        assert main(["solve", "--instances", str(path),
                     "--budget", "iters:300", "--out", str(out)]) == 0
        row = json.loads(out.read_text())["results"][0]
        assert row["length"] == int(row["length"])
        assert row["n"] == 9

    def test_trace_emitted(self, tmp_path):
        inst_dir = run_gen(tmp_path, n=12, count=1)
        out = tmp_path / "r.json"
        assert main(["solve", "--instances", str(inst_dir),
                     "--budget", "iters:100", "--trace",
                     "--out", str(out)]) == 0
        row = json.loads(out.read_text())["results"][0]
        assert len(row["trace"]) >= 1
        lengths = [v for _, v in row["trace"]]
        assert all(b <= a + 1e-12 for a, b in zip(lengths, lengths[1:]))


class TestEval:
    def make_run(self, tmp_path, n=10, count=2, iters=400):
        inst_dir = run_gen(tmp_path, n=n, count=count)
        out = tmp_path / "r.json"
        assert main(["solve", "--instances", str(inst_dir),
                     "--budget", f"iters:{iters}",
                     "--out", str(out)]) == 0
        optima = {}
        for nm in sorted(os.listdir(inst_dir)):
            lab = held_karp_optimal(load_instance(str(inst_dir / nm)))
            optima[lab.instance.id] = lab.optimal_length
        opt_path = tmp_path / "optima.json"
        opt_path.write_text(json.dumps(optima))
        return out, opt_path

    def test_uniform_report(self, tmp_path, capsys):
        res, opt = self.make_run(tmp_path)
        capsys.readouterr()
        assert main(["eval", "--results", str(res),
                     "--optima", str(opt)]) == 0
        out = capsys.readouterr().out
        lines = out.strip().split("\n")
        assert lines[0].startswith("group,instances,runs")
        assert lines[1].startswith("n=10,2,2,")
        gap = float(lines[1].split(",")[4])
        assert gap >= -1e-9

    def test_report_file_json(self, tmp_path):
        res, opt = self.make_run(tmp_path)
        out = tmp_path / "report.json"
        assert main(["eval", "--results", str(res), "--optima", str(opt),
                     "--out", str(out)]) == 0
        rep = json.loads(out.read_text())
        assert rep["mode"] == "uniform"
        assert rep["groups"][0]["missing"] == 0

    def test_missing_optima_flagged(self, tmp_path):
        res, _ = self.make_run(tmp_path)
        opt_path = tmp_path / "none.json"
        opt_path.write_text("{}")
        out = tmp_path / "report.json"
        assert main(["eval", "--results", str(res), "--optima",
                     str(opt_path), "--out", str(out)]) == 0
        rep = json.loads(out.read_text())
        assert rep["groups"][0]["mean_gap_pct"] is None
        assert len(rep["flagged"]) == 2

    def test_empty_results(self, tmp_path, capsys):
        res = tmp_path / "empty.json"
        res.write_text(json.dumps({"results": []}))
        capsys.readouterr()
        assert main(["eval", "--results", str(res)]) == 0
        assert capsys.readouterr().out == (
            "group,instances,runs,mean_length,mean_gap_pct,wall_ms,missing\n"
        )

    def test_results_directory_merged(self, tmp_path):
        run_dir = tmp_path / "runs"
        run_dir.mkdir()
        for s, length in ((0, 10.0), (1, 11.0)):
            (run_dir / f"seed{s}.json").write_text(json.dumps({
                "results": [
                    {"id": "x", "n": 20, "length": length, "seed": s}
                ]
            }))
        opt = tmp_path / "o.json"
        opt.write_text(json.dumps({"x": 10.0}))
        out = tmp_path / "rep.json"
        assert main(["eval", "--results", str(run_dir), "--optima",
                     str(opt), "--out", str(out)]) == 0
        rep = json.loads(out.read_text())
        assert rep["groups"][0]["runs"] == 2
        assert rep["groups"][0]["mean_gap_pct"] == pytest.approx(5.0)

    def test_tsplib_mode(self, tmp_path):
        res = tmp_path / "r.json"
        res.write_text(json.dumps({"results": [
            {"id": "t52", "n": 52, "length": 7700.0},
            {"id": "t52", "n": 52, "length": 7542.0},
        ]}))
        opt = tmp_path / "o.json"
        opt.write_text(json.dumps({"t52": 7542.0}))
        out = tmp_path / "rep.json"
        assert main(["eval", "--results", str(res), "--optima", str(opt),
                     "--mode", "tsplib", "--out", str(out)]) == 0
        rep = json.loads(out.read_text())
        assert rep["groups"][0]["group"] == "<100"
        assert rep["groups"][0]["mean_gap_pct"] == 0.0

    def test_malformed_results(self, tmp_path):
        res = tmp_path / "bad.json"
        res.write_text("not json")
        assert main(["eval", "--results", str(res)]) == 3
        res.write_text(json.dumps({"nothing": 1}))
        assert main(["eval", "--results", str(res)]) == 3


class TestQuality:
    def setup_run(self, tmp_path, count=3):
        inst_dir = run_gen(tmp_path, n=10, count=count)
        hm_dir = tmp_path / "hm"
        main(["heatmap", "--instances", str(inst_dir), "--out", str(hm_dir)])
        labs = []
        for nm in sorted(os.listdir(inst_dir)):
            labs.append(held_karp_optimal(load_instance(str(inst_dir / nm))))
        lab_path = tmp_path / "labels.labeled.txt"
        save_labeled(labs, str(lab_path))
        return inst_dir, hm_dir, lab_path, labs

    def test_rows_match_direct_metrics(self, tmp_path, capsys):
        inst_dir, hm_dir, lab_path, labs = self.setup_run(tmp_path)
        capsys.readouterr()
        assert main(["quality", "--heatmaps", str(hm_dir),
                     "--labeled", str(lab_path), "--k", "5"]) == 0
        lines = capsys.readouterr().out.strip().split("\n")
        assert lines[0] == ("id,n,avg_rank,avg_rank_directed,"
                            "missing_rate_topk,k,coverage")
        assert len(lines) == 1 + len(labs) + 1
        assert lines[-1].startswith("mean,")
        for line, lab in zip(lines[1:], labs):
            cells = line.split(",")
            hm = inverse_distance_heatmap(build_knn(lab.instance))
            assert float(cells[2]) == pytest.approx(
                average_rank(hm, lab), abs=1e-9
            )
            assert float(cells[4]) == pytest.approx(
                missing_rate(hm, lab, 5), abs=1e-9
            )

    def test_json_output(self, tmp_path):
        _, hm_dir, lab_path, labs = self.setup_run(tmp_path)
        out = tmp_path / "q.json"
        assert main(["quality", "--heatmaps", str(hm_dir),
                     "--labeled", str(lab_path), "--out", str(out)]) == 0
        data = json.loads(out.read_text())
        assert len(data["rows"]) == len(labs)
        assert data["mean"]["id"] == "mean"
        assert data["mean"]["avg_rank"] >= 1.0

    def test_count_mismatch(self, tmp_path, capsys):
        _, hm_dir, lab_path, _ = self.setup_run(tmp_path)
        victims = sorted(os.listdir(hm_dir))
        os.remove(hm_dir / victims[0])
        capsys.readouterr()
        assert main(["quality", "--heatmaps", str(hm_dir),
                     "--labeled", str(lab_path)]) == 3
        assert "heatmap files" in capsys.readouterr().err

    def test_k_validation(self, tmp_path):
        _, hm_dir, lab_path, _ = self.setup_run(tmp_path, count=1)
        assert main(["quality", "--heatmaps", str(hm_dir),
                     "--labeled", str(lab_path), "--k", "0"]) == 2


class TestParser:
    def test_no_command(self, capsys):
        assert main([]) == 2
        capsys.readouterr()

    def test_unknown_command(self, capsys):
        assert main(["frobnicate"]) == 2
        capsys.readouterr()

    def test_unknown_flag(self, capsys):
        assert main(["gen", "--n", "10", "--out", "x", "--zap"]) == 2
        capsys.readouterr()
