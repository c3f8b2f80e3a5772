"""Experiment orchestration: multi-seed runs, ablations, sweeps and reports.

Each repeat ``i`` uses seed ``base + i``. Split, oracle and initialisation
seeds are derived from it independently, so every ablation arm and sweep
value sees the same splits and the same oracle mistakes.
"""

from __future__ import annotations

import contextlib
import csv
import hashlib
import io
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from hetg import graph as gc
from hetg import pairs as ps
from hetg.discriminator import (
    OracleEndpointConfig,
    PromptTemplate,
    RemoteOracle,
    VerdictCache,
    discriminate_all,
    edge_f1,
    synthetic_oracle,
)
from hetg.discriminator.oracle import ground_truth_oracle
from hetg.errors import HetgError, ValidationError
from hetg.model import EdgeWeightMode, TrainConfig, fit, hinge, predict

logger = logging.getLogger(__name__)

CLASS_WORDS = (
    "astronomy", "biology", "chemistry", "drama", "economics",
    "finance", "geology", "history", "linguistics", "music",
)

ABLATION_ARMS = {
    "Averaged": EdgeWeightMode.AVERAGED,
    "GraphOnly": EdgeWeightMode.GRAPH_ONLY,
    "FixedWeights": EdgeWeightMode.FIXED,
}

SWEEP_PARAMETERS = ("alpha", "init_weights", "oracle_accuracy")
ALPHA_GRID = (0.0, 0.1, 0.3, 0.5, 0.7, 0.9)
INIT_WEIGHT_GRID = ((0.5, 0.5), (1.0, 0.0), (1.5, -0.5), (2.0, -1.0), (2.5, -1.5))

SEED_FIELDS = ("seed", "test_acc", "val_acc", "train_acc", "edge_macro_f1", "w_Ho", "w_He", "hinge", "best_epoch")
STD_NOTE = "std is the population standard deviation (ddof=0)"

# node-classification benchmark: embeddings alone are only weakly informative
BENCHMARK = dict(n_nodes=1000, n_classes=2, homophily=0.2, embed_dim=16, class_separation=1.0, noise=1.0)
# the distilled student sees only embeddings, so its benchmark is less noisy
DISTILL_BENCHMARK = dict(BENCHMARK, noise=0.3)


# -- synthetic data ----------------------------------------------------------


def generate_synthetic_benchmark(n_nodes=1000, n_classes=2, homophily=0.2, embed_dim=16,
                                 class_separation=1.0, noise=1.0, seed=0, n_edges=None, avg_degree=4.0):
    """Random labelled graph with controlled edge homophily and Gaussian class embeddings.

    Each edge picks a uniform random endpoint and joins it to a same-class node
    with probability ``homophily``, otherwise to a node of another class.
    Embeddings are ``class_separation * centroid + noise * N(0, I)``.
    """
    if not 0.0 <= homophily <= 1.0:
        raise ValidationError("homophily must lie in [0, 1]")
    if n_classes < 2:
        raise ValidationError("need at least 2 classes")
    if n_nodes < 2 * n_classes:
        raise ValidationError(f"{n_nodes} nodes cannot give each of {n_classes} classes two members")
    if embed_dim < 1 or noise < 0:
        raise ValidationError("embed_dim must be >= 1 and noise >= 0")
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(n_nodes) % n_classes)
    members = [np.flatnonzero(labels == c) for c in range(n_classes)]
    others = [np.flatnonzero(labels != c) for c in range(n_classes)]

    if n_edges is None:
        n_edges = int(round(avg_degree * n_nodes / 2))
    max_intra = sum(len(m) * (len(m) - 1) // 2 for m in members)
    max_inter = n_nodes * (n_nodes - 1) // 2 - max_intra
    if (homophily > 0 and n_edges * homophily > 0.5 * max_intra) or \
            (homophily < 1 and n_edges * (1 - homophily) > 0.5 * max_inter):
        raise ValidationError(f"{n_edges} edges is too dense for {n_nodes} nodes at homophily {homophily}")

    edges = set()
    while len(edges) < n_edges:
        u = int(rng.integers(n_nodes))
        pool = members[labels[u]] if rng.random() < homophily else others[labels[u]]
        v = int(pool[rng.integers(len(pool))])
        if u != v:
            edges.add(ps.canonical(u, v))

    names = [CLASS_WORDS[c] if c < len(CLASS_WORDS) else f"topic{c}" for c in range(n_classes)]
    texts = [f"Document {i}. This page is about {names[labels[i]]}." for i in range(n_nodes)]

    if embed_dim >= n_classes:
        centroids = np.eye(n_classes, embed_dim)
    else:
        c = rng.standard_normal((n_classes, embed_dim))
        centroids = c / np.linalg.norm(c, axis=1, keepdims=True)
    emb = class_separation * centroids[labels] + noise * rng.standard_normal((n_nodes, embed_dim))
    graph = gc.TextGraph.build(texts, labels, sorted(edges), names, name=f"synthetic-{seed}")
    emb.setflags(write=False)
    return graph, emb


# -- configuration -----------------------------------------------------------


@dataclass
class ExperimentConfig:
    dataset: dict = field(default_factory=lambda: {"synthetic": dict(BENCHMARK)})
    proportions: tuple = (0.48, 0.32, 0.20)
    split_counts: tuple | None = None
    seed: int = 0
    repeats: int = 10
    pair_policy: str = "auto"
    oracle: str = "synthetic:1.0"
    remote: dict | None = None
    cache_path: str | None = None
    oracle_workers: int = 4
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if isinstance(self.train, dict):
            self.train = TrainConfig(**self.train)
        self.proportions = tuple(self.proportions)
        if self.split_counts is not None:
            self.split_counts = tuple(self.split_counts)
        if self.repeats < 1:
            raise ValidationError("repeats must be >= 1")
        if self.pair_policy not in ("auto", "all", "hop1", "hop12"):
            raise ValidationError(f"unknown pair policy {self.pair_policy!r}")
        if not isinstance(self.dataset, dict) or not (
            "synthetic" in self.dataset or {"nodes", "edges", "classes"} <= set(self.dataset)
        ):
            raise ValidationError("dataset needs either 'synthetic' or nodes/edges/classes paths")
        parse_oracle_spec(self.oracle)
        if self.oracle == "remote" and not self.remote:
            raise ValidationError("remote oracle selected but no 'remote' endpoint block given")

    @classmethod
    def from_json(cls, path):
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"cannot read config {path}: {exc}") from None
        try:
            return cls(**raw)
        except TypeError as exc:
            raise ValidationError(f"bad config {path}: {exc}") from None

    def to_dict(self):
        return {
            "dataset": self.dataset,
            "proportions": list(self.proportions),
            "split_counts": list(self.split_counts) if self.split_counts else None,
            "seed": self.seed,
            "repeats": self.repeats,
            "pair_policy": self.pair_policy,
            "oracle": self.oracle,
            "remote": self.remote,
            "cache_path": self.cache_path,
            "oracle_workers": self.oracle_workers,
            "train": self.train.to_dict(),
        }


def parse_oracle_spec(spec: str):
    """``remote | cache | truth | synthetic:<acc> | student:<path>`` -> (kind, arg)."""
    kind, _, arg = spec.partition(":")
    if kind in ("remote", "cache", "truth") and not arg:
        return kind, None
    if kind == "synthetic":
        try:
            acc = float(arg)
        except ValueError:
            raise ValidationError(f"bad synthetic oracle accuracy {arg!r}") from None
        if not 0 <= acc <= 1:
            raise ValidationError("synthetic oracle accuracy must lie in [0, 1]")
        return kind, acc
    if kind == "student" and arg:
        return kind, arg
    raise ValidationError(f"unknown oracle spec {spec!r}")


def derive_seed(seed, stream: str) -> int:
    tag = int.from_bytes(hashlib.blake2b(stream.encode(), digest_size=4).digest(), "little")
    return int(np.random.SeedSequence([seed, tag]).generate_state(1)[0])


@contextlib.contextmanager
def stage(name):
    try:
        yield
    except HetgError as exc:
        if not getattr(exc, "stage", None):
            exc.stage = name
            exc.args = (f"[{name}] {exc}",)
        raise


# -- data loading ------------------------------------------------------------


@dataclass
class Dataset:
    graph: gc.TextGraph
    embeddings: np.ndarray
    digest: dict


def _file_digest(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def load_dataset(spec: dict) -> Dataset:
    with stage("load"):
        if "synthetic" in spec:
            graph, emb = generate_synthetic_benchmark(**spec["synthetic"])
            h = hashlib.sha256(np.ascontiguousarray(emb).tobytes())
            h.update(repr((graph.edges, graph.labels.tolist())).encode())
            return Dataset(graph, emb, {"synthetic": h.hexdigest()})
        graph = gc.load_graph(spec["nodes"], spec["edges"], spec["classes"], name=spec.get("name"))
        digest = {k: _file_digest(spec[k]) for k in ("nodes", "edges", "classes")}
        if spec.get("embeddings"):
            emb = gc.load_embeddings(spec["embeddings"], graph)
            digest["embeddings"] = _file_digest(spec["embeddings"])
        else:
            dim = int(spec.get("stub_dim", 64))
            logger.warning("no embeddings given; using %d-d stub embeddings", dim)
            emb = gc.stub_embedder(graph, dim, seed=int(spec.get("stub_seed", 0)))
        return Dataset(graph, emb, digest)


def pair_policy(config: ExperimentConfig, graph, split) -> ps.PairPolicy:
    if config.pair_policy == "auto":
        return ps.default_policy(graph, split)
    return ps.PairPolicy(ps.PairMode(config.pair_policy))


def make_oracle(config: ExperimentConfig, data: Dataset, seed, accuracy=None):
    """Build the verdict function and its cache for one repeat."""
    kind, arg = parse_oracle_spec(config.oracle)
    if accuracy is not None:
        kind, arg = "synthetic", accuracy
    graph = data.graph
    if kind == "synthetic":
        oracle = synthetic_oracle(graph, arg, seed=derive_seed(seed, "oracle"))
    elif kind == "truth":
        oracle = ground_truth_oracle(graph)
    elif kind == "student":
        from hetg.distill import StudentModel, student_as_oracle

        oracle = student_as_oracle(StudentModel.load(arg), data.embeddings)
    elif kind == "remote":
        remote = dict(config.remote)
        template = PromptTemplate(domain=remote.pop("domain", ""))
        oracle = RemoteOracle(graph, OracleEndpointConfig(**remote), template)
    else:  # cache only: every miss is an error
        def oracle(u, v):
            raise ValidationError(f"pair ({u}, {v}) missing from verdict cache")
        oracle.key = PromptTemplate().hash if config.remote is None else \
            PromptTemplate(domain=config.remote.get("domain", "")).hash
    path = config.cache_path if kind in ("remote", "cache") else None
    cache = VerdictCache(path, template_hash=oracle.key, dataset_id=graph.name)
    return oracle, cache


# -- running -----------------------------------------------------------------


def run_seed(config: ExperimentConfig, data: Dataset, seed, mode=None, accuracy=None, train_overrides=None):
    """One full pipeline pass; returns a flat metrics dict."""
    graph = data.graph
    with stage("splits"):
        split = gc.make_splits(graph, config.proportions, derive_seed(seed, "split"), config.split_counts)
    with stage("pairs"):
        train_pairs = ps.select_training_pairs(graph, split, pair_policy(config, graph, split))
        infer_pairs = ps.select_inference_pairs(graph)
    with stage("discriminate"):
        oracle, cache = make_oracle(config, data, seed, accuracy)
        verdicts = discriminate_all(infer_pairs, oracle, cache, workers=config.oracle_workers)
        truth = [ps.EdgePairRecord(u, v, ps.true_relation(graph, u, v)) for u, v in infer_pairs]
        f1 = edge_f1(verdicts, truth)[2] if truth else float("nan")
    tc = replace(config.train, seed=derive_seed(seed, "init"), **(train_overrides or {}))
    if mode is not None:
        tc = replace(tc, weight_mode=EdgeWeightMode(mode))
    with stage("train"):
        result = fit(graph, data.embeddings, verdicts, split, tc)
    with stage("predict"):
        pred = predict(result.params, graph, data.embeddings, verdicts, tc.weight_mode, tc.hops)
    labels = graph.labels
    return {
        "seed": seed,
        "test_acc": float((pred[split.mask("test")] == labels[split.mask("test")]).mean()),
        "val_acc": float((pred[split.mask("val")] == labels[split.mask("val")]).mean()),
        "train_acc": float((pred[split.mask("train")] == labels[split.mask("train")]).mean()),
        "edge_macro_f1": f1,
        "w_Ho": result.params.w_ho,
        "w_He": result.params.w_he,
        "hinge": hinge(result.params, tc.alpha),
        "best_epoch": result.best_epoch,
        "n_train_pairs": len(train_pairs),
        "history": result.history,
        "params": result.params,
    }


def mean_std(values):
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std(ddof=0))


@dataclass
class ExperimentReport:
    rows: list
    config: dict
    digest: dict
    label: str = "run"

    @property
    def accuracies(self):
        return [r["test_acc"] for r in self.rows]

    @property
    def mean(self):
        return mean_std(self.accuracies)[0]

    @property
    def std(self):
        return mean_std(self.accuracies)[1]

    def summary(self):
        out = {}
        for f in SEED_FIELDS[1:]:
            out[f] = mean_std([r[f] for r in self.rows])
        return out


def run_experiment(config: ExperimentConfig, data: Dataset | None = None, mode=None, accuracy=None,
                   train_overrides=None, label="run") -> ExperimentReport:
    data = data or load_dataset(config.dataset)
    rows = []
    for i in range(config.repeats):
        seed = config.seed + i
        row = run_seed(config, data, seed, mode, accuracy, train_overrides)
        logger.info("%s seed %d: test acc %.4f", label, seed, row["test_acc"])
        rows.append(row)
    return ExperimentReport(rows, config.to_dict(), data.digest, label)


def run_ablation(config: ExperimentConfig, data: Dataset | None = None, arms=None):
    data = data or load_dataset(config.dataset)
    arms = arms or list(ABLATION_ARMS)
    return {arm: run_experiment(config, data, mode=ABLATION_ARMS[arm], label=arm) for arm in arms}


def run_sweep(config: ExperimentConfig, parameter, values, data: Dataset | None = None):
    if parameter not in SWEEP_PARAMETERS:
        raise ValidationError(f"unknown sweep parameter {parameter!r}; choose from {SWEEP_PARAMETERS}")
    values = list(values)
    if not values:
        raise ValidationError("sweep needs at least one value")
    data = data or load_dataset(config.dataset)
    out = {}
    for value in values:
        if parameter == "alpha":
            rep = run_experiment(config, data, train_overrides={"alpha": float(value)}, label=f"alpha={value}")
        elif parameter == "init_weights":
            ho, he = value
            rep = run_experiment(config, data, train_overrides={"init_w_ho": float(ho), "init_w_he": float(he)},
                                 label=f"init=({ho},{he})")
        else:
            rep = run_experiment(config, data, accuracy=float(value), label=f"oracle_accuracy={value}")
        out[_value_key(value)] = rep
    return out


def _value_key(value):
    if isinstance(value, (tuple, list)):
        return "(" + ",".join(_fmt(float(v)) for v in value) + ")"
    return _fmt(float(value))


# -- report files ------------------------------------------------------------


def _fmt(x):
    if isinstance(x, float):
        return repr(x) if math.isfinite(x) else "nan"
    return str(x)


def _csv_text(header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def report_csv(reports: dict) -> str:
    """Per-seed rows for every arm, then mean and std rows per arm."""
    header = ("arm", "row") + SEED_FIELDS
    rows = []
    for arm in sorted(reports):
        rep = reports[arm]
        for r in sorted(rep.rows, key=lambda r: r["seed"]):
            rows.append((arm, "seed") + tuple(r[f] for f in SEED_FIELDS))
        summ = rep.summary()
        rows.append((arm, "mean", "") + tuple(summ[f][0] for f in SEED_FIELDS[1:]))
        rows.append((arm, "std", "") + tuple(summ[f][1] for f in SEED_FIELDS[1:]))
    return _csv_text(header, rows)


def summary_csv(reports: dict, key_name="arm") -> str:
    header = (key_name, "n", "mean_test_acc", "std_test_acc", "mean_edge_macro_f1", "mean_w_Ho", "mean_w_He")
    rows = []
    for key, rep in reports.items():
        s = rep.summary()
        rows.append((key, len(rep.rows), s["test_acc"][0], s["test_acc"][1],
                     s["edge_macro_f1"][0], s["w_Ho"][0], s["w_He"][0]))
    return _csv_text(header, rows)


def report_markdown(reports: dict, title="Node classification accuracy (%)", key_name="Arm") -> str:
    lines = [f"# {title}", "", f"_{STD_NOTE}; {len(next(iter(reports.values())).rows)} seed(s)._", "",
             f"| {key_name} | Test acc | Edge macro-F1 | w_Ho | w_He |", "|---|---|---|---|---|"]
    for key, rep in reports.items():
        s = rep.summary()
        lines.append(
            f"| {key} | {100 * s['test_acc'][0]:.2f} ± {100 * s['test_acc'][1]:.2f} "
            f"| {s['edge_macro_f1'][0]:.4f} | {s['w_Ho'][0]:.4f} | {s['w_He'][0]:.4f} |"
        )
    return "\n".join(lines) + "\n"


def write_reports(reports: dict, out_dir, stem="report", key_name="arm"):
    """Write ``<stem>.csv``, ``<stem>_summary.csv``, ``<stem>.md`` and ``<stem>.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{stem}.csv").write_text(report_csv(reports), encoding="utf-8")
    (out / f"{stem}_summary.csv").write_text(summary_csv(reports, key_name), encoding="utf-8")
    (out / f"{stem}.md").write_text(report_markdown(reports, key_name=key_name.capitalize()), encoding="utf-8")
    first = next(iter(reports.values()))
    meta = {"note": STD_NOTE, "config": first.config, "artifacts": first.digest, "keys": list(reports)}
    (out / f"{stem}.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return out / f"{stem}.csv"


def read_report_csv(path):
    """Parse a per-seed report CSV back into ``{arm: [row dicts]}`` (seed rows only)."""
    out = {}
    with Path(path).open(encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            if rec["row"] != "seed":
                continue
            row = {f: float(rec[f]) for f in SEED_FIELDS}
            row["seed"] = int(row["seed"])
            row["best_epoch"] = int(row["best_epoch"])
            out.setdefault(rec["arm"], []).append(row)
    return out


# -- distillation ------------------------------------------------------------


@dataclass
class DistillResult:
    seed: int
    student: object
    expanded: list
    dropped: int
    heldout: list
    agreement: float
    student_f1: float
    teacher_f1: float


def run_distillation(config: ExperimentConfig, data: Dataset | None = None, seed=None,
                     distill_policy=None, student_config=None) -> DistillResult:
    """Teacher pseudo-labels -> expanded set -> student, scored on held-out edges.

    Held-out pairs are the graph edges that touch a test node; they are
    removed from the pseudo-label pool so the student never sees them.
    """
    from hetg.distill import (
        StudentConfig, agreement_metrics, build_expanded_set, generate_pseudo_labels,
        student_as_oracle, train_student,
    )

    data = data or load_dataset(config.dataset)
    graph = data.graph
    seed = config.seed if seed is None else seed
    with stage("splits"):
        split = gc.make_splits(graph, config.proportions, derive_seed(seed, "split"), config.split_counts)
    with stage("pairs"):
        gt = ps.select_training_pairs(graph, split, pair_policy(config, graph, split))
        policy = distill_policy or ps.default_distill_policy(graph)
        is_test = split.mask("test")
        heldout_keys = [(u, v) for u, v in graph.edges if is_test[u] or is_test[v]]
        held = set(heldout_keys)
        pool = [p for p in ps.select_distill_pairs(graph, split, policy) if p not in held]
        heldout = [ps.EdgePairRecord(u, v, ps.true_relation(graph, u, v)) for u, v in heldout_keys]
    with stage("discriminate"):
        teacher, cache = make_oracle(config, data, seed)
        pseudo = generate_pseudo_labels(pool, teacher, cache, workers=config.oracle_workers)
    with stage("distill"):
        expanded = build_expanded_set(gt, pseudo.records)
        sc = student_config or StudentConfig(seed=derive_seed(seed, "student"))
        student = train_student(expanded, data.embeddings, sc)
        metrics = agreement_metrics(student_as_oracle(student, data.embeddings), teacher, heldout)
    return DistillResult(seed, student, expanded, pseudo.dropped, heldout, *metrics)
