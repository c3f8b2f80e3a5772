"""Text-attributed graphs: loading, validation, splits, embeddings and homophily."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import struct
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from hetg.errors import ParseError, ValidationError

logger = logging.getLogger(__name__)

ROLES = ("train", "val", "test")
EMB_MAGIC = b"EMB1"


@dataclass(frozen=True)
class TextGraph:
    """Undirected graph whose nodes carry raw text and a class label.

    Edges are stored canonically as ``(u, v)`` with ``u < v``; the adjacency
    lists and the directed arc arrays used for message passing are derived
    once at construction.
    """

    texts: tuple
    labels: np.ndarray
    edges: tuple
    classes: tuple
    name: str = "graph"
    dropped_edges: int = 0
    _adj: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        n = len(self.texts)
        if labels.shape != (n,):
            raise ValidationError(f"expected {n} labels, got shape {labels.shape}")
        if n and (labels.min() < 0 or labels.max() >= len(self.classes)):
            raise ValidationError("node label outside the class vocabulary")
        adj = [[] for _ in range(n)]
        prev = None
        for u, v in self.edges:
            if not (0 <= u < v < n):
                raise ValidationError(f"edge ({u}, {v}) is not canonical or out of range for N={n}")
            if prev is not None and (u, v) <= prev:
                raise ValidationError("edges must be sorted and unique")
            prev = (u, v)
            adj[u].append(v)
            adj[v].append(u)
        object.__setattr__(self, "_adj", tuple(tuple(sorted(a)) for a in adj))

    @classmethod
    def build(cls, texts, labels, edges, classes, name="graph"):
        """Construct a graph from loose edge input, dropping self-loops and duplicates."""
        canon = set()
        dropped = 0
        for u, v in edges:
            u, v = int(u), int(v)
            if u == v:
                dropped += 1
                continue
            key = (u, v) if u < v else (v, u)
            if key in canon:
                dropped += 1
                continue
            canon.add(key)
        if dropped:
            logger.warning("dropped %d self-loop/duplicate edge(s)", dropped)
        return cls(
            texts=tuple(texts),
            labels=np.asarray(labels, dtype=np.int64),
            edges=tuple(sorted(canon)),
            classes=tuple(classes),
            name=name,
            dropped_edges=dropped,
        )

    @property
    def num_nodes(self) -> int:
        return len(self.texts)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def neighbors(self, v) -> tuple:
        return self._adj[v]

    def degrees(self) -> np.ndarray:
        return np.array([len(a) for a in self._adj], dtype=np.int64)

    def arcs(self):
        """Both directions of every edge as ``(src, dst)`` index arrays."""
        if not self.edges:
            empty = np.zeros(0, dtype=np.int64)
            return empty, empty
        e = np.asarray(self.edges, dtype=np.int64)
        src = np.concatenate([e[:, 0], e[:, 1]])
        dst = np.concatenate([e[:, 1], e[:, 0]])
        return src, dst


@dataclass(frozen=True)
class SplitAssignment:
    """Role of every node, encoded as 0=train, 1=val, 2=test."""

    roles: np.ndarray

    def __post_init__(self):
        roles = np.asarray(self.roles, dtype=np.int8)
        roles.setflags(write=False)
        object.__setattr__(self, "roles", roles)

    def mask(self, role: str) -> np.ndarray:
        return self.roles == ROLES.index(role)

    def nodes(self, role: str) -> np.ndarray:
        return np.flatnonzero(self.mask(role))

    def counts(self):
        return tuple(int((self.roles == i).sum()) for i in range(3))


# -- loading -----------------------------------------------------------------


def load_graph(nodes_path, edges_path, classes_path, name=None) -> TextGraph:
    """Read the JSON Lines / TSV / plain-text trio into a validated graph."""
    classes_path = Path(classes_path)
    classes = [ln.strip() for ln in classes_path.read_text(encoding="utf-8").splitlines()]
    classes = [c for c in classes if c]
    if len(set(classes)) != len(classes):
        raise ValidationError(f"{classes_path}: duplicate class names")
    class_index = {c: i for i, c in enumerate(classes)}

    nodes = {}
    nodes_path = Path(nodes_path)
    with nodes_path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                nid, text, label = int(obj["id"]), obj["text"], obj["label"]
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ParseError(nodes_path, lineno, f"bad node record ({exc})") from None
            if not isinstance(text, str):
                raise ParseError(nodes_path, lineno, "text must be a string")
            if label not in class_index:
                raise ValidationError(f"{nodes_path}:{lineno}: unknown class label {label!r}")
            if nid in nodes:
                raise ValidationError(f"{nodes_path}:{lineno}: duplicate node id {nid}")
            nodes[nid] = (text, class_index[label])
    n = len(nodes)
    if sorted(nodes) != list(range(n)):
        raise ValidationError(f"{nodes_path}: node ids must be dense in [0, {n})")

    edges = []
    edges_path = Path(edges_path)
    with edges_path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            parts = line.split()
            try:
                if len(parts) != 2:
                    raise ValueError(f"expected 2 columns, got {len(parts)}")
                u, v = int(parts[0]), int(parts[1])
            except ValueError as exc:
                raise ParseError(edges_path, lineno, str(exc)) from None
            for x in (u, v):
                if not 0 <= x < n:
                    raise ValidationError(f"{edges_path}:{lineno}: dangling endpoint {x}")
            edges.append((u, v))

    return TextGraph.build(
        texts=[nodes[i][0] for i in range(n)],
        labels=[nodes[i][1] for i in range(n)],
        edges=edges,
        classes=classes,
        name=name or nodes_path.stem,
    )


def save_graph(graph: TextGraph, nodes_path, edges_path, classes_path):
    with Path(nodes_path).open("w", encoding="utf-8") as fh:
        for i, (text, label) in enumerate(zip(graph.texts, graph.labels)):
            rec = {"id": i, "text": text, "label": graph.classes[label]}
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
    with Path(edges_path).open("w", encoding="utf-8") as fh:
        for u, v in graph.edges:
            fh.write(f"{u}\t{v}\n")
    Path(classes_path).write_text("".join(c + "\n" for c in graph.classes), encoding="utf-8")


# -- splits ------------------------------------------------------------------


def make_splits(graph: TextGraph, proportions=(0.48, 0.32, 0.20), seed=0, counts=None):
    """Randomly assign each node to train / val / test.

    Train and validation sizes are ``floor(frac * N)``; the remainder goes to
    test. Passing explicit ``counts=(n_train, n_val)`` overrides the rounding.
    """
    n = graph.num_nodes
    if n < 3:
        raise ValidationError(f"need at least 3 nodes to split, got {n}")
    fr = tuple(float(p) for p in proportions)
    if len(fr) != 3 or min(fr) <= 0 or abs(sum(fr) - 1.0) > 1e-9:
        raise ValidationError(f"split fractions must be positive and sum to 1, got {proportions}")
    if counts is None:
        n_train = math.floor(fr[0] * n)
        n_val = math.floor(fr[1] * n)
    else:
        n_train, n_val = (int(c) for c in counts)
    if n_train < 1 or n_val < 1 or n - n_train - n_val < 1:
        raise ValidationError(f"split ({n_train}, {n_val}, rest) leaves an empty role for N={n}")
    perm = np.random.default_rng(seed).permutation(n)
    roles = np.full(n, 2, dtype=np.int8)
    roles[perm[:n_train]] = 0
    roles[perm[n_train:n_train + n_val]] = 1
    return SplitAssignment(roles)


def write_splits(split: SplitAssignment, path):
    with Path(path).open("w", encoding="utf-8") as fh:
        for i, r in enumerate(split.roles):
            fh.write(f"{i}\t{ROLES[r]}\n")


def read_splits(path, graph: TextGraph) -> SplitAssignment:
    path = Path(path)
    roles = np.full(graph.num_nodes, -1, dtype=np.int8)
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2 or parts[1].strip() not in ROLES:
                raise ParseError(path, lineno, "expected 'node_id<TAB>train|val|test'")
            try:
                nid = int(parts[0])
            except ValueError:
                raise ParseError(path, lineno, f"bad node id {parts[0]!r}") from None
            if not 0 <= nid < graph.num_nodes:
                raise ValidationError(f"{path}:{lineno}: unknown node {nid}")
            roles[nid] = ROLES.index(parts[1].strip())
    if (roles < 0).any():
        raise ValidationError(f"{path}: {(roles < 0).sum()} node(s) have no role")
    return SplitAssignment(roles)


# -- statistics --------------------------------------------------------------


def edge_homophily(graph: TextGraph) -> float:
    """Fraction of edges whose endpoints share a label."""
    if not graph.edges:
        raise ValidationError("edge homophily is undefined for a graph without edges")
    e = np.asarray(graph.edges)
    same = graph.labels[e[:, 0]] == graph.labels[e[:, 1]]
    return float(same.mean())


def k_hop_neighbors(graph: TextGraph, node, k=1) -> set:
    """Nodes within shortest-path distance ``k`` of ``node``, excluding itself."""
    if k not in (1, 2):
        raise ValidationError(f"k must be 1 or 2, got {k}")
    if not 0 <= node < graph.num_nodes:
        raise ValidationError(f"unknown node {node}")
    seen = {node}
    frontier = deque([(node, 0)])
    while frontier:
        x, dist = frontier.popleft()
        if dist == k:
            continue
        for y in graph.neighbors(x):
            if y not in seen:
                seen.add(y)
                frontier.append((y, dist + 1))
    seen.discard(node)
    return seen


# -- embeddings --------------------------------------------------------------


def _check_embeddings(mat, graph: TextGraph, source):
    if mat.ndim != 2:
        raise ValidationError(f"{source}: embeddings must be a 2-D matrix")
    if mat.shape[0] != graph.num_nodes:
        raise ValidationError(f"{source}: {mat.shape[0]} rows but graph has {graph.num_nodes} nodes")
    if mat.shape[1] < 1:
        raise ValidationError(f"{source}: embedding dimension must be >= 1")
    bad = ~np.isfinite(mat)
    if bad.any():
        row = int(np.argwhere(bad)[0, 0])
        raise ValidationError(f"{source}: non-finite value in row {row}")
    mat = np.ascontiguousarray(mat, dtype=np.float64)
    mat.setflags(write=False)
    return mat


def load_embeddings(path, graph: TextGraph) -> np.ndarray:
    """Load precomputed node embeddings (``EMB1`` binary or JSON) as float64."""
    path = Path(path)
    if path.suffix == ".json":
        try:
            mat = np.asarray(json.loads(path.read_text(encoding="utf-8")), dtype=np.float64)
        except (json.JSONDecodeError, ValueError) as exc:
            raise ValidationError(f"{path}: bad JSON embeddings ({exc})") from None
        return _check_embeddings(mat, graph, path)
    raw = path.read_bytes()
    if len(raw) < 20 or raw[:4] != EMB_MAGIC:
        raise ValidationError(f"{path}: missing EMB1 header")
    n, d = struct.unpack("<QQ", raw[4:20])
    body = raw[20:]
    if len(body) != 4 * n * d:
        raise ValidationError(f"{path}: header says {n}x{d} but payload has {len(body) // 4} floats")
    if n != graph.num_nodes:
        raise ValidationError(f"{path}: {n} rows but graph has {graph.num_nodes} nodes")
    mat = np.frombuffer(body, dtype="<f4").reshape(n, d).astype(np.float64)
    return _check_embeddings(mat, graph, path)


def save_embeddings(mat, path):
    mat = np.asarray(mat)
    path = Path(path)
    if path.suffix == ".json":
        path.write_text(json.dumps(mat.tolist()), encoding="utf-8")
        return
    n, d = mat.shape
    with path.open("wb") as fh:
        fh.write(EMB_MAGIC + struct.pack("<QQ", n, d))
        fh.write(np.ascontiguousarray(mat, dtype="<f4").tobytes())


def _text_digest(text: str) -> int:
    return int.from_bytes(hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest(), "little")


def stub_embedder(graph: TextGraph, dim: int, seed=0) -> np.ndarray:
    """Deterministic unit-norm stand-in for an LLM text encoder.

    Each row depends only on ``seed`` and the node text, so identical texts
    map to identical vectors.
    """
    if dim < 1:
        raise ValidationError("dim must be >= 1")
    out = np.empty((graph.num_nodes, dim))
    for i, text in enumerate(graph.texts):
        vec = np.random.default_rng([seed, _text_digest(text)]).standard_normal(dim)
        out[i] = vec / np.linalg.norm(vec)
    out.setflags(write=False)
    return out
