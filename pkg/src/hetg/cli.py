"""Command-line entry point: ``hetg <subcommand> [--config PATH] [--seed N] [--out DIR]``.

Exit codes: 0 success, 1 validation error, 2 transport error, 3 numerical error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from hetg import graph as gc
from hetg import pairs as ps
from hetg.discriminator import (
    PromptTemplate,
    discriminate_all,
    edge_f1,
    export_finetune,
)
from hetg.errors import HetgError, ValidationError
from hetg.experiment import (
    ALPHA_GRID,
    INIT_WEIGHT_GRID,
    SWEEP_PARAMETERS,
    ExperimentConfig,
    ExperimentReport,
    derive_seed,
    generate_synthetic_benchmark,
    load_dataset,
    make_oracle,
    pair_policy,
    read_report_csv,
    report_markdown,
    run_ablation,
    run_distillation,
    run_experiment,
    run_sweep,
    summary_csv,
    write_reports,
)
from hetg.model import save_checkpoint, write_history

logger = logging.getLogger("hetg")


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_json(args.config) if args.config else ExperimentConfig()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.oracle is not None:
        overrides["oracle"] = args.oracle
    if getattr(args, "repeats", None) is not None:
        overrides["repeats"] = args.repeats
    if getattr(args, "dataset_dir", None):
        d = Path(args.dataset_dir)
        overrides["dataset"] = {
            "nodes": str(d / "nodes.jsonl"), "edges": str(d / "edges.tsv"),
            "classes": str(d / "classes.txt"),
        }
        if (d / "embeddings.emb").exists():
            overrides["dataset"]["embeddings"] = str(d / "embeddings.emb")
    if getattr(args, "cache", None):
        overrides["cache_path"] = args.cache
    return replace(cfg, **overrides) if overrides else cfg


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# -- subcommands -------------------------------------------------------------


def cmd_synth(args):
    graph, emb = generate_synthetic_benchmark(
        n_nodes=args.nodes, n_classes=args.classes, homophily=args.homophily, embed_dim=args.dim,
        class_separation=args.separation, noise=args.noise, seed=args.seed or 0, n_edges=args.edges,
    )
    out = _out(args)
    gc.save_graph(graph, out / "nodes.jsonl", out / "edges.tsv", out / "classes.txt")
    gc.save_embeddings(emb, out / "embeddings.emb")
    print(f"wrote {graph.num_nodes} nodes, {graph.num_edges} edges, H(G)={gc.edge_homophily(graph):.4f} to {out}")


def cmd_ingest(args):
    cfg = _load_config(args)
    data = load_dataset(cfg.dataset)
    g = data.graph
    split = gc.make_splits(g, cfg.proportions, derive_seed(cfg.seed, "split"), cfg.split_counts)
    out = _out(args)
    gc.write_splits(split, out / "splits.tsv")
    stats = {
        "name": g.name,
        "nodes": g.num_nodes,
        "edges": g.num_edges,
        "classes": len(g.classes),
        "edge_homophily": gc.edge_homophily(g) if g.num_edges else None,
        "dropped_edges": g.dropped_edges,
        "embedding_dim": int(data.embeddings.shape[1]),
        "split_counts": list(split.counts()),
        "artifacts": data.digest,
    }
    _write_json(out / "stats.json", stats)
    print(json.dumps(stats, indent=2, sort_keys=True))


def cmd_pairs(args):
    cfg = _load_config(args)
    data = load_dataset(cfg.dataset)
    g = data.graph
    split = gc.make_splits(g, cfg.proportions, derive_seed(cfg.seed, "split"), cfg.split_counts)
    out = _out(args)
    train = ps.select_training_pairs(g, split, pair_policy(cfg, g, split))
    ps.write_pairs(train, out / "train_pairs.tsv")
    infer = [ps.EdgePairRecord(u, v, ps.true_relation(g, u, v)) for u, v in ps.select_inference_pairs(g)]
    ps.write_pairs(infer, out / "inference_pairs.tsv")
    distill = [ps.EdgePairRecord(u, v, ps.true_relation(g, u, v))
               for u, v in ps.select_distill_pairs(g, split, ps.default_distill_policy(g))]
    ps.write_pairs(distill, out / "distill_pairs.tsv")
    gc.write_splits(split, out / "splits.tsv")
    if args.finetune:
        export_finetune(g, train, out / "finetune.jsonl")
    print(f"train pairs {len(train)}, inference pairs {len(infer)}, distill pairs {len(distill)}")


def cmd_discriminate(args):
    cfg = _load_config(args)
    data = load_dataset(cfg.dataset)
    g = data.graph
    out = _out(args)
    if cfg.cache_path is None:
        cfg = replace(cfg, cache_path=str(out / f"verdicts-{g.name}.tsv"))
    oracle, cache = make_oracle(cfg, data, cfg.seed)
    pairs = ps.select_inference_pairs(g)
    try:
        verdicts = discriminate_all(pairs, oracle, cache, workers=cfg.oracle_workers)
    finally:
        if hasattr(oracle, "close"):
            oracle.close()
    truth = [ps.EdgePairRecord(u, v, ps.true_relation(g, u, v)) for u, v in pairs]
    f_homo, f_hetero, macro = edge_f1(verdicts, truth)
    unparseable = sum(v.value.value == "unparseable" for v in verdicts.values())
    metrics = {"pairs": len(pairs), "f1_homo": f_homo, "f1_hetero": f_hetero, "macro_f1": macro,
               "unparseable": unparseable, "cache": cfg.cache_path, "template_hash": PromptTemplate().hash}
    _write_json(out / "edge_f1.json", metrics)
    print(json.dumps(metrics, indent=2, sort_keys=True))


def cmd_train(args):
    cfg = _load_config(args)
    data = load_dataset(cfg.dataset)
    out = _out(args)
    report = run_experiment(cfg, data)
    arm = cfg.train.weight_mode.value
    write_reports({arm: report}, out)
    for row in report.rows:
        write_history(row["history"], out / f"history_seed{row['seed']}.csv")
    save_checkpoint(report.rows[0]["params"], out / "model.json", cfg.train, PromptTemplate().hash)
    print(report_markdown({arm: report}), end="")


def cmd_distill(args):
    cfg = _load_config(args)
    data = load_dataset(cfg.dataset)
    out = _out(args)
    res = run_distillation(cfg, data)
    ps.write_pairs(res.expanded, out / "expanded_pairs.tsv")
    res.student.save(out / "student.json")
    metrics = {"seed": res.seed, "expanded": len(res.expanded), "dropped": res.dropped,
               "heldout": len(res.heldout), "agreement": res.agreement,
               "student_macro_f1": res.student_f1, "teacher_macro_f1": res.teacher_f1}
    _write_json(out / "distill.json", metrics)
    print(json.dumps(metrics, indent=2, sort_keys=True))


def cmd_ablate(args):
    cfg = _load_config(args)
    out = _out(args)
    reports = run_ablation(cfg)
    write_reports(reports, out, stem="ablation")
    print(report_markdown(reports, title="Ablation"), end="")


def _sweep_values(param, raw):
    if raw is None:
        if param == "alpha":
            return list(ALPHA_GRID)
        if param == "init_weights":
            return list(INIT_WEIGHT_GRID)
        return [0.5, 0.75, 1.0]
    if param == "init_weights":
        vals = []
        for item in raw.split(";"):
            ho, he = item.split(",")
            vals.append((float(ho), float(he)))
        return vals
    return [float(x) for x in raw.split(",")]


def cmd_sweep(args):
    cfg = _load_config(args)
    out = _out(args)
    try:
        values = _sweep_values(args.param, args.values)
    except ValueError as exc:
        raise ValidationError(f"bad sweep values {args.values!r}: {exc}") from None
    reports = run_sweep(cfg, args.param, values)
    write_reports(reports, out, stem=f"sweep_{args.param}", key_name="value")
    print(report_markdown(reports, title=f"Sweep over {args.param}", key_name="Value"), end="")


def cmd_report(args):
    rows = read_report_csv(args.input)
    reports = {arm: ExperimentReport(r, {}, {}, arm) for arm, r in rows.items()}
    out = _out(args)
    stem = Path(args.input).stem
    (out / f"{stem}_summary.csv").write_text(summary_csv(reports), encoding="utf-8")
    md = report_markdown(reports)
    (out / f"{stem}.md").write_text(md, encoding="utf-8")
    print(md, end="")


# -- parser ------------------------------------------------------------------


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file mirroring ExperimentConfig")
    common.add_argument("--seed", type=int, help="base seed (repeat i uses seed+i)")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--oracle", help="remote | cache | truth | synthetic:<acc> | student:<path>")
    common.add_argument("--dataset-dir", help="directory holding nodes.jsonl, edges.tsv, classes.txt")
    common.add_argument("--cache", help="verdict cache TSV")
    common.add_argument("--repeats", type=int)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="hetg", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic benchmark dataset")
    p.add_argument("--nodes", type=int, default=1000)
    p.add_argument("--classes", type=int, default=2)
    p.add_argument("--homophily", type=float, default=0.2)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--separation", type=float, default=1.0)
    p.add_argument("--noise", type=float, default=1.0)
    p.add_argument("--edges", type=int, default=None)
    p.set_defaults(func=cmd_synth)

    sub.add_parser("ingest", parents=[common], help="validate a dataset and write stats + splits") \
        .set_defaults(func=cmd_ingest)
    p = sub.add_parser("pairs", parents=[common], help="write Stage-1, inference and distillation pair lists")
    p.add_argument("--finetune", action="store_true", help="also export prompt/completion JSONL")
    p.set_defaults(func=cmd_pairs)
    sub.add_parser("discriminate", parents=[common], help="obtain verdicts for every edge and score them") \
        .set_defaults(func=cmd_discriminate)
    sub.add_parser("train", parents=[common], help="multi-seed Stage-2 training and report") \
        .set_defaults(func=cmd_train)
    sub.add_parser("distill", parents=[common], help="teacher -> student distillation") \
        .set_defaults(func=cmd_distill)
    sub.add_parser("ablate", parents=[common], help="Averaged / GraphOnly / FixedWeights comparison") \
        .set_defaults(func=cmd_ablate)
    p = sub.add_parser("sweep", parents=[common], help="one experiment per parameter value")
    p.add_argument("--param", choices=SWEEP_PARAMETERS, required=True)
    p.add_argument("--values", help="comma-separated; init_weights as 'ho,he;ho,he'")
    p.set_defaults(func=cmd_sweep)
    p = sub.add_parser("report", parents=[common], help="re-aggregate a per-seed report CSV")
    p.add_argument("--input", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except HetgError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
