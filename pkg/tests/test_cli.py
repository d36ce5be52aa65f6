from __future__ import annotations

import subprocess
import sys

import numpy as np
import pytest

from vitriever import (
    DescriptorSet,
    EvalProtocol,
    GridSpec,
    Metric,
    NormalizationSpec,
    Scheme,
    evaluate_retrieval,
    load_normalizer,
    read_store,
    run_grid,
    write_generic_json,
    write_store,
)
from vitriever.cli import main
from vitriever.runner import DEFAULT_GRID_METRICS, DEFAULT_GRID_SCHEMES

from conftest import (
    make_ids,
    make_planted_clusters,
    planted_map_ground_truth,
    planted_ns_ground_truth,
    random_matrix,
)
from oracles import oracle_average_precision


@pytest.fixture
def planted(rng, tmp_path):
    matrix, ids, groups = make_planted_clusters(rng, n_groups=6, group_size=4, dim=24)
    store = tmp_path / "index.vitd"
    write_store(matrix, ids, store)
    map_gt = tmp_path / "map_gt.json"
    write_generic_json(planted_map_ground_truth(groups), map_gt)
    ns_gt = tmp_path / "ns_gt.json"
    write_generic_json(planted_ns_ground_truth(groups), ns_gt)
    return {"matrix": matrix, "ids": ids, "groups": groups, "store": store,
            "map_gt": map_gt, "ns_gt": ns_gt, "dir": tmp_path}


class TestRunnerPipeline:
    def test_planted_perfect_map_scores_100(self, planted):
        index = DescriptorSet(planted["matrix"], planted["ids"])
        gt = planted_map_ground_truth(planted["groups"])
        outcome = evaluate_retrieval(
            index, gt, Metric.COSINE, NormalizationSpec(Scheme.L2_AXIS1)
        )
        assert outcome.report.aggregate == 100.0

    def test_planted_perfect_ns_scores_4(self, planted):
        index = DescriptorSet(planted["matrix"], planted["ids"])
        gt = planted_ns_ground_truth(planted["groups"])
        outcome = evaluate_retrieval(
            index, gt, Metric.EUCLIDEAN, NormalizationSpec(Scheme.ROBUST)
        )
        assert outcome.report.aggregate == 4.0

    def test_negated_queries_break_perfection_under_correlation(self, planted, rng):
        # flipping the sign of each query descriptor inverts its correlation
        # ranking, so its own group can no longer lead
        index = DescriptorSet(planted["matrix"], planted["ids"])
        negated = DescriptorSet(
            type(planted["matrix"])(-planted["matrix"].data), planted["ids"]
        )
        gt = planted_map_ground_truth(planted["groups"])
        outcome = evaluate_retrieval(
            index, gt, Metric.CORRELATION, NormalizationSpec(Scheme.NONE), queries=negated
        )
        assert outcome.report.aggregate < 100.0
        # cross-check one query against the enumeration oracle
        from vitriever import batch_search
        qid = gt.queries[0].query_id
        row = planted["ids"].index(qid)
        ranked = batch_search(
            type(planted["matrix"])(negated.matrix.data[row : row + 1]),
            [qid], planted["matrix"], planted["ids"], Metric.CORRELATION,
        )[0]
        expected = oracle_average_precision(
            [e.id for e in ranked.entries if e.id != qid], set(gt.queries[0].positives)
        )
        assert dict(outcome.report.per_query)[qid] == pytest.approx(expected, abs=1e-9)

    def test_map_requires_full_rankings(self, planted):
        index = DescriptorSet(planted["matrix"], planted["ids"])
        gt = planted_map_ground_truth(planted["groups"])
        with pytest.raises(Exception, match="full rankings"):
            evaluate_retrieval(index, gt, Metric.COSINE, NormalizationSpec(), k=5)

    def test_grid_structure_and_cell_equality(self, planted):
        index = DescriptorSet(planted["matrix"], planted["ids"])
        gt = planted_map_ground_truth(planted["groups"])
        grid = run_grid(index, gt, GridSpec(model_label="test"))
        assert [row[0].scheme for row in grid.cells] == list(DEFAULT_GRID_SCHEMES)
        assert [c.metric for c in grid.cells[0]] == list(DEFAULT_GRID_METRICS)
        assert sum(len(row) for row in grid.cells) == 35
        for row in grid.cells:
            for cell in row:
                standalone = evaluate_retrieval(
                    index, gt, cell.metric, GridSpec().normalization_spec(cell.scheme)
                )
                assert cell.report.aggregate == standalone.report.aggregate
                assert cell.report.per_query == standalone.report.per_query

    def test_grid_parallel_cells_match_sequential(self, planted):
        index = DescriptorSet(planted["matrix"], planted["ids"])
        gt = planted_ns_ground_truth(planted["groups"])
        spec = GridSpec(model_label="par", metrics=(Metric.COSINE, Metric.MANHATTAN))
        seq = run_grid(index, gt, spec, parallel_cells=1)
        par = run_grid(index, gt, spec, parallel_cells=4)
        for row_s, row_p in zip(seq.cells, par.cells):
            for cs, cp in zip(row_s, row_p):
                assert cs.report.aggregate == cp.report.aggregate


class TestCliIngest:
    def test_text_ingest(self, tmp_path, capsys):
        listing = tmp_path / "list.txt"
        listing.write_text("a 1 2 3 4\nb 5 6 7 8\nc 0 0 1 0\n")
        out = tmp_path / "store.vitd"
        assert main(["ingest", str(listing), "--out", str(out)]) == 0
        assert "ingested 3 descriptors of dimension 4" in capsys.readouterr().out
        matrix, ids = read_store(out)
        assert ids == ["a", "b", "c"]

    def test_binary_ingest_is_byte_identical(self, tmp_path, rng, capsys):
        store = tmp_path / "in.vitd"
        write_store(random_matrix(rng, 7, 5), make_ids(7), store)
        out = tmp_path / "out.vitd"
        assert main(["ingest", str(store), "--out", str(out)]) == 0
        assert out.read_bytes() == store.read_bytes()

    def test_duplicate_id_reports_id_and_line(self, tmp_path, capsys):
        listing = tmp_path / "list.txt"
        listing.write_text("a 1 2\nb 3 4\na 5 6\n")
        rc = main(["ingest", str(listing), "--out", str(tmp_path / "o.vitd")])
        err = capsys.readouterr().err
        assert rc == 1
        assert "duplicate id 'a'" in err and "line 1" in err

    def test_missing_input(self, tmp_path, capsys):
        rc = main(["ingest", str(tmp_path / "nope.txt"), "--out", str(tmp_path / "o.vitd")])
        assert rc == 1
        assert "error" in capsys.readouterr().err


class TestCliNormalize:
    def test_writes_store_and_sidecar(self, tmp_path, rng, capsys):
        store = tmp_path / "in.vitd"
        write_store(random_matrix(rng, 10, 6), make_ids(10), store)
        out = tmp_path / "norm.vitd"
        rc = main(["normalize", str(store), "--out", str(out), "--norm", "robust"])
        assert rc == 0
        matrix, ids = read_store(out)
        assert matrix.count == 10
        normalizer = load_normalizer(f"{out}.vitn")
        assert normalizer.spec.scheme is Scheme.ROBUST
        assert normalizer.column_stats.shape == (6, 2)

    def test_degenerate_warning_on_constant_column(self, tmp_path, rng, capsys):
        data = rng.standard_normal((8, 3)).astype(np.float32)
        data[:, 1] = 2.0
        from vitriever import DescriptorMatrix

        store = tmp_path / "in.vitd"
        write_store(DescriptorMatrix(data), make_ids(8), store)
        rc = main(["normalize", str(store), "--out", str(tmp_path / "o.vitd"), "--norm", "robust"])
        assert rc == 0
        assert "degenerate" in capsys.readouterr().err


class TestCliSearch:
    def test_trec_output(self, tmp_path, rng, capsys):
        store = tmp_path / "in.vitd"
        write_store(random_matrix(rng, 6, 5), make_ids(6), store)
        rc = main(
            ["search", "--index", str(store), "--queries", "SAME",
             "--metric", "cosine", "--k", "2", "--exclude-self"]
        )
        assert rc == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert len(lines) == 12
        qid, rank, ident, dist = lines[0].split()
        assert qid == "img00000" and rank == "1" and ident != "img00000"
        float(dist)

    def test_out_file(self, tmp_path, rng, capsys):
        store = tmp_path / "in.vitd"
        write_store(random_matrix(rng, 4, 5), make_ids(4), store)
        out = tmp_path / "run.txt"
        rc = main(
            ["search", "--index", str(store), "--metric", "manhattan", "--k", "full",
             "--out", str(out)]
        )
        assert rc == 0
        assert len(out.read_text().splitlines()) == 16


class TestCliEvaluate:
    def test_planted_perfect_map(self, planted, capsys):
        rc = main(
            ["evaluate", "--index", str(planted["store"]), "--layout", "json",
             "--gt", str(planted["map_gt"]), "--metric", "cosine", "--norm", "l2-axis1"]
        )
        out = capsys.readouterr().out
        assert rc == 0
        assert "mAP: 100.0000" in out

    def test_planted_perfect_ns_with_report_file(self, planted, tmp_path, capsys):
        report = tmp_path / "report.txt"
        rc = main(
            ["evaluate", "--index", str(planted["store"]), "--layout", "json",
             "--gt", str(planted["ns_gt"]), "--metric", "euclidean", "--norm", "robust",
             "--out", str(report)]
        )
        assert rc == 0
        lines = report.read_text().splitlines()
        assert lines[-1] == "AGGREGATE 4.000000"

    def test_unknown_metric_fails(self, planted, capsys):
        rc = main(
            ["evaluate", "--index", str(planted["store"]), "--layout", "json",
             "--gt", str(planted["map_gt"]), "--metric", "hamming", "--norm", "none"]
        )
        assert rc == 1
        assert "unknown metric" in capsys.readouterr().err

    def test_ukbench_layout_via_listing(self, tmp_path, rng, capsys):
        matrix, ids, groups = make_planted_clusters(rng, n_groups=3, group_size=4, dim=16)
        ids = [f"ukbench{i:05d}" for i in range(12)]
        store = tmp_path / "uk.vitd"
        write_store(matrix, ids, store)
        rc = main(
            ["evaluate", "--index", str(store), "--layout", "ukbench",
             "--metric", "cosine", "--norm", "l2-axis1"]
        )
        assert rc == 0
        assert "N-S: 4.0000" in capsys.readouterr().out


class TestCliGrid:
    def test_grid_csv_structure_and_best_flag(self, planted, tmp_path, capsys):
        csv_path = tmp_path / "grid.csv"
        table_path = tmp_path / "grid.txt"
        rc = main(
            ["grid", "--index", str(planted["store"]), "--layout", "json",
             "--gt", str(planted["map_gt"]), "--model-label", "planted",
             "--csv", str(csv_path), "--out", str(table_path)]
        )
        assert rc == 0
        rows = csv_path.read_text().strip().splitlines()
        assert len(rows) == 36  # header + 35 cells
        assert rows[0] == "model,normalization,metric,score,best,error"
        assert sum(1 for r in rows[1:] if r.split(",")[4] == "1") == 1
        table = table_path.read_text()
        assert "Model: planted" in table
        for label in ("Manh.", "Eucl.", "Cos", "BC", "Canb.", "Cheb.", "Correl."):
            assert label in table
        for scheme_label in ("L2 Axis=1", "L2 Axis=0", "L1 Axis=1", "L1 Axis=0", "ROBUST"):
            assert scheme_label in table

    def test_grid_metric_subset(self, planted, capsys):
        rc = main(
            ["grid", "--index", str(planted["store"]), "--layout", "json",
             "--gt", str(planted["ns_gt"]), "--metrics", "cosine,chebyshev",
             "--norms", "l2-axis1"]
        )
        assert rc == 0

    def test_failing_cell_reported_while_others_run(self, planted, capsys):
        # truncated rankings are a per-cell error under the mAP protocol, so
        # every cell fails but the sweep still completes and reports
        rc = main(
            ["grid", "--index", str(planted["store"]), "--layout", "json",
             "--gt", str(planted["map_gt"]), "--metrics", "manhattan,cosine",
             "--norms", "l2-axis1", "--k", "4"]
        )
        captured = capsys.readouterr()
        assert rc == 1
        assert captured.out.count("ERR") == 2
        assert "failed:" in captured.out
        assert "grid cells failed" in captured.err

    def test_degenerate_rows_do_not_abort_a_cell(self, planted, tmp_path, rng):
        # a zero index row is flagged +inf inside the kernels and ranks last;
        # the sweep completes cleanly
        from vitriever import DescriptorMatrix

        data = planted["matrix"].data.copy()
        extra = np.vstack([data, np.zeros((1, data.shape[1]), dtype=np.float32)])
        store = tmp_path / "zeros.vitd"
        write_store(DescriptorMatrix(extra), list(planted["ids"]) + ["zzz_zero"], store)
        rc = main(
            ["grid", "--index", str(store), "--queries", str(planted["store"]),
             "--layout", "json", "--gt", str(planted["ns_gt"]),
             "--metrics", "cosine,correlation", "--norms", "l2-axis1", "--k", "4"]
        )
        assert rc == 0


class TestConsoleScript:
    def test_entry_point_runs(self, tmp_path, rng):
        store = tmp_path / "in.vitd"
        write_store(random_matrix(rng, 3, 4), make_ids(3), store)
        proc = subprocess.run(
            [sys.executable, "-m", "vitriever.cli", "ingest", str(store), "--out",
             str(tmp_path / "out.vitd")],
            capture_output=True,
            text=True,
        )
        assert proc.returncode == 0
        assert "ingested 3 descriptors" in proc.stdout


class TestThreadsEnv:
    def test_default_threads_from_env(self, monkeypatch):
        from vitriever.cli import _default_threads

        monkeypatch.setenv("VITRIEVER_THREADS", "7")
        assert _default_threads() == 7
        monkeypatch.setenv("VITRIEVER_THREADS", "junk")
        assert _default_threads() == 1
        monkeypatch.delenv("VITRIEVER_THREADS")
        assert _default_threads() == 1
