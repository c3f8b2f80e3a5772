"""Node-pair enumeration and relation labelling for discrimination and distillation."""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from hetg.errors import ParseError, ValidationError
from hetg.graph import SplitAssignment, TextGraph, k_hop_neighbors


class Relation(enum.Enum):
    HOMO = "homo"
    HETERO = "hetero"


class Source(enum.Enum):
    GT = "gt"
    TEACHER = "teacher"
    STUDENT = "student"


class PairMode(enum.Enum):
    ALL_TRAIN = "all"
    HOP1 = "hop1"
    HOP12 = "hop12"


@dataclass(frozen=True, order=True)
class EdgePairRecord:
    u: int
    v: int
    relation: Relation
    source: Source = Source.GT

    def __post_init__(self):
        if not self.u < self.v:
            raise ValidationError(f"pair ({self.u}, {self.v}) is not canonical (u < v)")

    @property
    def key(self):
        return (self.u, self.v)


@dataclass(frozen=True)
class PairPolicy:
    mode: PairMode = PairMode.ALL_TRAIN
    # majority:minority ratio cap for AllTrainPairs; None keeps every pair
    balance_ratio: float | None = None
    seed: int = 0


def canonical(u, v):
    return (u, v) if u < v else (v, u)


def true_relation(graph: TextGraph, u, v) -> Relation:
    return Relation.HOMO if graph.labels[u] == graph.labels[v] else Relation.HETERO


def default_policy(graph: TextGraph, split: SplitAssignment) -> PairPolicy:
    """Size-based policy: all train pairs for small graphs, hop-limited otherwise."""
    if graph.num_edges > 50_000:
        return PairPolicy(PairMode.HOP1)
    if len(split.nodes("train")) <= 300:
        return PairPolicy(PairMode.ALL_TRAIN)
    return PairPolicy(PairMode.HOP12)


def default_distill_policy(graph: TextGraph) -> PairPolicy:
    return PairPolicy(PairMode.HOP1 if graph.num_edges > 5_000 else PairMode.HOP12)


def _hop_pairs(graph: TextGraph, k, keep):
    """Canonical pairs within ``k`` hops for which ``keep(u, v)`` holds."""
    out = set()
    for u in range(graph.num_nodes):
        for v in k_hop_neighbors(graph, u, k):
            if u < v and keep(u, v):
                out.add((u, v))
    return sorted(out)


def _hops(mode: PairMode) -> int:
    return {PairMode.HOP1: 1, PairMode.HOP12: 2}[mode]


def _downsample(records, ratio, seed):
    homo = [r for r in records if r.relation is Relation.HOMO]
    hetero = [r for r in records if r.relation is Relation.HETERO]
    major, minor = (homo, hetero) if len(homo) > len(hetero) else (hetero, homo)
    cap = int(ratio * len(minor))
    if len(major) <= cap:
        return records
    rng = np.random.default_rng(seed)
    keep = rng.choice(len(major), size=cap, replace=False)
    return sorted(minor + [major[i] for i in keep])


def select_training_pairs(graph: TextGraph, split: SplitAssignment, policy: PairPolicy = PairPolicy()):
    """Ground-truth labelled pairs among training nodes, sorted by ``(u, v)``."""
    train = split.nodes("train")
    if len(train) < 2:
        raise ValidationError(f"need at least 2 training nodes, got {len(train)}")
    if policy.mode is PairMode.ALL_TRAIN:
        pairs = itertools.combinations(sorted(int(x) for x in train), 2)
    else:
        is_train = split.mask("train")
        pairs = _hop_pairs(graph, _hops(policy.mode), lambda u, v: is_train[u] and is_train[v])
    records = [EdgePairRecord(u, v, true_relation(graph, u, v)) for u, v in pairs]
    if policy.balance_ratio is not None and records:
        records = _downsample(records, policy.balance_ratio, policy.seed)
    return records


def select_inference_pairs(graph: TextGraph):
    """Every undirected edge once, canonical and sorted."""
    return list(graph.edges)


def select_distill_pairs(graph: TextGraph, split: SplitAssignment, policy: PairPolicy):
    """Hop-limited pairs touching at least one validation or test node."""
    if policy.mode is PairMode.ALL_TRAIN:
        raise ValidationError("distillation pairs require a hop-based policy")
    is_train = split.mask("train")
    return _hop_pairs(graph, _hops(policy.mode), lambda u, v: not (is_train[u] and is_train[v]))


# -- TSV interchange ---------------------------------------------------------


def write_pairs(records, path):
    with Path(path).open("w", encoding="utf-8") as fh:
        for r in records:
            fh.write(f"{r.u}\t{r.v}\t{r.relation.value}\t{r.source.value}\n")


def read_pairs(path):
    path = Path(path)
    out = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            try:
                u, v = int(parts[0]), int(parts[1])
                rel, src = Relation(parts[2]), Source(parts[3])
            except (IndexError, ValueError) as exc:
                raise ParseError(path, lineno, f"bad pair record ({exc})") from None
            out.append(EdgePairRecord(*canonical(u, v), rel, src))
    return out
