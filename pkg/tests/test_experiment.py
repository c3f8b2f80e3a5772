import csv
import io
import json

import numpy as np
import pytest

from hetg.errors import HetgError, ValidationError
from hetg.experiment import (
    ExperimentConfig,
    ExperimentReport,
    derive_seed,
    generate_synthetic_benchmark,
    load_dataset,
    mean_std,
    parse_oracle_spec,
    read_report_csv,
    report_csv,
    run_distillation,
    run_experiment,
    run_sweep,
    stage,
    write_reports,
)
from hetg.graph import edge_homophily, save_embeddings, save_graph
from hetg.model import TrainConfig

SMALL = dict(n_nodes=80, n_classes=2, homophily=0.2, embed_dim=8, class_separation=1.0, noise=0.5)


def small_config(**kw):
    kw.setdefault("repeats", 2)
    kw.setdefault("train", TrainConfig(hidden=8, epochs=20, patience=20))
    return ExperimentConfig(dataset={"synthetic": dict(SMALL)}, **kw)


class TestGenerator:
    def test_homophily_on_ten_thousand_edges(self):
        g, _ = generate_synthetic_benchmark(n_nodes=2000, homophily=0.2, n_edges=10_000, seed=0)
        assert g.num_edges == 10_000
        assert abs(edge_homophily(g) - 0.2) <= 0.02

    @pytest.mark.parametrize("h", [0.0, 1.0])
    def test_homophily_extremes(self, h):
        g, _ = generate_synthetic_benchmark(n_nodes=200, homophily=h, seed=1)
        assert edge_homophily(g) == h

    def test_noise_free_rows_identical_per_class(self):
        g, emb = generate_synthetic_benchmark(n_nodes=50, n_classes=3, noise=0.0, seed=2)
        for c in range(3):
            rows = emb[g.labels == c]
            assert (rows == rows[0]).all()
        assert len({tuple(emb[g.labels == c][0]) for c in range(3)}) == 3

    def test_deterministic(self):
        a = generate_synthetic_benchmark(n_nodes=100, seed=5)
        b = generate_synthetic_benchmark(n_nodes=100, seed=5)
        assert np.array_equal(a[0].edges, b[0].edges) and np.array_equal(a[1], b[1])
        c = generate_synthetic_benchmark(n_nodes=100, seed=6)
        assert not np.array_equal(a[1], c[1])

    @pytest.mark.parametrize("kw", [dict(homophily=1.5), dict(n_classes=1), dict(n_nodes=3), dict(noise=-1),
                                    dict(n_nodes=20, n_edges=180)])
    def test_invalid(self, kw):
        with pytest.raises(ValidationError):
            generate_synthetic_benchmark(**kw)


class TestConfig:
    @pytest.mark.parametrize("spec,expected", [
        ("truth", ("truth", None)), ("synthetic:0.75", ("synthetic", 0.75)),
        ("student:m.json", ("student", "m.json")), ("cache", ("cache", None)),
    ])
    def test_oracle_specs(self, spec, expected):
        assert parse_oracle_spec(spec) == expected

    @pytest.mark.parametrize("spec", ["synthetic:2", "synthetic:x", "magic", "student:"])
    def test_bad_oracle_specs(self, spec):
        with pytest.raises(ValidationError):
            parse_oracle_spec(spec)

    def test_json_round_trip(self, tmp_path):
        cfg = small_config(seed=7)
        (tmp_path / "c.json").write_text(json.dumps(cfg.to_dict()))
        back = ExperimentConfig.from_json(tmp_path / "c.json")
        assert back == cfg

    @pytest.mark.parametrize("raw", ['{"repeats": 0}', '{"pair_policy": "x"}', '{"oracle": "remote"}',
                                     '{"dataset": {"nodes": "a"}}', '{"unknown": 1}', "not json"])
    def test_bad_config(self, tmp_path, raw):
        (tmp_path / "c.json").write_text(raw)
        with pytest.raises(ValidationError):
            ExperimentConfig.from_json(tmp_path / "c.json")

    def test_derive_seed_streams(self):
        assert derive_seed(0, "split") == derive_seed(0, "split")
        assert derive_seed(0, "split") != derive_seed(0, "init")
        assert derive_seed(0, "split") != derive_seed(1, "split")


def test_stage_prefix():
    with pytest.raises(HetgError, match=r"^\[train\] boom"):
        with stage("train"):
            raise HetgError("boom")


def test_load_dataset_from_files(tmp_path):
    g, emb = generate_synthetic_benchmark(**SMALL)
    save_graph(g, tmp_path / "n.jsonl", tmp_path / "e.tsv", tmp_path / "c.txt")
    save_embeddings(emb, tmp_path / "x.emb")
    data = load_dataset({"nodes": str(tmp_path / "n.jsonl"), "edges": str(tmp_path / "e.tsv"),
                         "classes": str(tmp_path / "c.txt"), "embeddings": str(tmp_path / "x.emb")})
    assert data.graph.num_edges == g.num_edges
    np.testing.assert_allclose(data.embeddings, emb.astype(np.float32))
    assert set(data.digest) == {"nodes", "edges", "classes", "embeddings"}


def test_mean_std_population():
    assert mean_std([1.0, 3.0]) == (2.0, 1.0)
    assert mean_std([0.7]) == (0.7, 0.0)


@pytest.fixture(scope="module")
def report():
    return run_experiment(small_config())


class TestRuns:
    def test_seeds_consecutive(self, report):
        assert [r["seed"] for r in report.rows] == [0, 1]

    def test_rows_in_range(self, report):
        for r in report.rows:
            assert 0 <= r["test_acc"] <= 1
            assert r["edge_macro_f1"] == 1.0  # perfect default oracle
            assert len(r["history"]) >= 1

    def test_rerun_identical(self, report):
        again = run_experiment(small_config())
        assert report_csv({"a": again}) == report_csv({"a": report})

    def test_files_byte_identical(self, report, tmp_path):
        write_reports({"a": report}, tmp_path / "x")
        write_reports({"a": run_experiment(small_config())}, tmp_path / "y")
        for name in ("report.csv", "report_summary.csv", "report.md", "report.json"):
            assert (tmp_path / "x" / name).read_bytes() == (tmp_path / "y" / name).read_bytes()

    def test_summary_rows_recompute(self, report):
        rows = list(csv.DictReader(io.StringIO(report_csv({"a": report}))))
        seeds = [float(r["test_acc"]) for r in rows if r["row"] == "seed"]
        mean = next(float(r["test_acc"]) for r in rows if r["row"] == "mean")
        std = next(float(r["test_acc"]) for r in rows if r["row"] == "std")
        assert abs(mean - np.mean(seeds)) <= 1e-12
        assert abs(std - np.std(seeds)) <= 1e-12

    def test_read_back(self, report, tmp_path):
        path = write_reports({"a": report}, tmp_path)
        rows = read_report_csv(path)["a"]
        assert [r["test_acc"] for r in rows] == report.accuracies

    def test_single_repeat_zero_std(self):
        rep = run_experiment(small_config(repeats=1))
        assert rep.std == 0.0

    def test_seed_offset(self, report):
        # base seed 1, one repeat reproduces repeat 1 of the base-0 run
        rep = run_experiment(small_config(repeats=1, seed=1))
        assert rep.rows[0]["seed"] == 1
        assert rep.rows[0]["test_acc"] == report.rows[1]["test_acc"]


def test_sweep_shape():
    cfg = small_config(repeats=1)
    out = run_sweep(cfg, "alpha", [0.0, 0.5])
    assert list(out) == ["0.0", "0.5"]
    assert all(len(r.rows) == 1 for r in out.values())
    inits = run_sweep(cfg, "init_weights", [(1.0, 0.0)])
    assert list(inits) == ["(1.0,0.0)"]
    with pytest.raises(ValidationError):
        run_sweep(cfg, "lr", [0.1])
    with pytest.raises(ValidationError):
        run_sweep(cfg, "alpha", [])


def test_sweep_oracle_accuracy_changes_f1():
    out = run_sweep(small_config(repeats=1), "oracle_accuracy", [0.5, 1.0])
    assert out["1.0"].rows[0]["edge_macro_f1"] == 1.0
    assert out["0.5"].rows[0]["edge_macro_f1"] < 0.8


def test_distillation_small():
    cfg = ExperimentConfig(dataset={"synthetic": dict(SMALL, noise=0.3)}, oracle="synthetic:0.9")
    res = run_distillation(cfg)
    heldout = {r.key for r in res.heldout}
    assert heldout and not heldout & {r.key for r in res.expanded if r.source.value == "teacher"}
    assert 0.0 <= res.agreement <= 1.0
    assert res.teacher_f1 > 0.7


def test_ablation_rows_and_arm_names(tmp_path):
    from hetg.experiment import run_ablation

    reports = run_ablation(small_config(repeats=2))
    assert list(reports) == ["Averaged", "GraphOnly", "FixedWeights"]
    assert {tuple(r["seed"] for r in rep.rows) for rep in reports.values()} == {(0, 1)}
    write_reports(reports, tmp_path, stem="ablation")
    summary = (tmp_path / "ablation_summary.csv").read_text().splitlines()
    assert len(summary) == 4
    md = (tmp_path / "ablation.md").read_text()
    assert all(f"| {arm} |" in md for arm in reports)


def test_default_sweep_grids():
    from hetg.cli import _sweep_values

    assert _sweep_values("alpha", None) == [0.0, 0.1, 0.3, 0.5, 0.7, 0.9]
    assert _sweep_values("init_weights", None) == [(0.5, 0.5), (1.0, 0.0), (1.5, -0.5), (2.0, -1.0), (2.5, -1.5)]
    out = run_sweep(small_config(repeats=1, train=TrainConfig(hidden=4, epochs=5)), "alpha", _sweep_values("alpha", None))
    assert len(out) == 6


@pytest.mark.slow
@pytest.mark.xfail(strict=False, reason="FixedWeights measures about 2.8 points above Averaged on the benchmark; "
                                        "see the decisions ledger")
def test_ablation_full_ordering_statistical():
    from hetg.experiment import run_ablation

    reports = run_ablation(ExperimentConfig())
    avg, fixed, graph = (reports[k].mean for k in ("Averaged", "FixedWeights", "GraphOnly"))
    assert avg + 0.01 >= fixed
    assert fixed + 0.01 >= graph
