"""Teacher-to-student distillation of the edge discriminator.

The teacher labels extra node pairs, the pseudo-labels are merged with the
ground-truth pairs, and a logistic classifier over embedding-pair features is
trained on the result. The trained student then answers the same Yes/No
question as the teacher and can replace it in Stage 2.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from hetg.discriminator.oracle import OracleVerdict, Verdict, VerdictCache, discriminate_all, edge_f1
from hetg.errors import ValidationError
from hetg.pairs import EdgePairRecord, Relation, Source, canonical

logger = logging.getLogger(__name__)

RECIPE = "pair-concat-absdiff-prod-v1"


class PseudoLabels(NamedTuple):
    records: list
    dropped: int


def generate_pseudo_labels(pairs, teacher, cache: VerdictCache | None = None, workers=1) -> PseudoLabels:
    """Teacher verdicts for ``pairs``; unparseable replies are dropped and counted."""
    verdicts = discriminate_all(pairs, teacher, cache, workers=workers)
    records, dropped = [], 0
    for key in sorted(verdicts):
        rel = verdicts[key].value.relation()
        if rel is None:
            dropped += 1
            continue
        records.append(EdgePairRecord(*key, rel, Source.TEACHER))
    if dropped:
        logger.warning("dropped %d unparseable teacher verdict(s)", dropped)
    return PseudoLabels(records, dropped)


def build_expanded_set(ground_truth, pseudo):
    """Union of both record lists; ground truth wins on key collisions."""
    merged = {}
    for rec in pseudo:
        merged[rec.key] = rec
    for rec in ground_truth:
        merged[rec.key] = rec
    return [merged[k] for k in sorted(merged)]


def pair_features(embeddings, u, v):
    """``[e_u, e_v, |e_u - e_v|, e_u * e_v]`` with ``u < v``."""
    u, v = canonical(u, v)
    eu, ev = embeddings[u], embeddings[v]
    return np.concatenate([eu, ev, np.abs(eu - ev), eu * ev])


def _feature_matrix(embeddings, keys):
    E = np.asarray(embeddings, dtype=np.float64)
    if not keys:
        return np.zeros((0, 4 * E.shape[1]))
    k = np.asarray(keys, dtype=np.int64)
    lo, hi = np.minimum(k[:, 0], k[:, 1]), np.maximum(k[:, 0], k[:, 1])
    eu, ev = E[lo], E[hi]
    return np.hstack([eu, ev, np.abs(eu - ev), eu * ev])


@dataclass
class StudentConfig:
    learning_rate: float = 0.1
    epochs: int = 1000
    l2: float = 1e-4
    seed: int = 0


@dataclass
class StudentModel:
    weights: np.ndarray
    bias: float
    recipe: str = RECIPE
    threshold: float = 0.5
    loss_history: list = field(default_factory=list, repr=False)

    def probability(self, embeddings, pairs):
        X = _feature_matrix(embeddings, list(pairs))
        return _sigmoid(X @ self.weights + self.bias)

    def save(self, path):
        payload = {
            "recipe": self.recipe,
            "dim": int(self.weights.size),
            "weights": self.weights.tolist(),
            "bias": self.bias,
            "threshold": self.threshold,
        }
        Path(path).write_text(json.dumps(payload), encoding="utf-8")

    @classmethod
    def load(cls, path):
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        if payload.get("recipe") != RECIPE:
            raise ValidationError(f"{path}: unsupported student recipe {payload.get('recipe')!r}")
        w = np.asarray(payload["weights"], dtype=np.float64)
        if w.size != payload["dim"]:
            raise ValidationError(f"{path}: weight vector length {w.size} != dim {payload['dim']}")
        return cls(w, float(payload["bias"]), payload["recipe"], float(payload["threshold"]))


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def train_student(records, embeddings, config: StudentConfig = StudentConfig()) -> StudentModel:
    """L2-regularised logistic regression (homophilic = positive) by full-batch gradient descent."""
    if not records:
        raise ValidationError("cannot train a student on an empty label set")
    y = np.array([r.relation is Relation.HOMO for r in records], dtype=np.float64)
    if y.min() == y.max():
        raise ValidationError("student training needs both homophilic and heterophilic pairs")
    X = _feature_matrix(embeddings, [r.key for r in records])
    n, d = X.shape
    rng = np.random.default_rng(config.seed)
    w = rng.normal(scale=0.01, size=d)
    b = 0.0
    history = []
    for _ in range(config.epochs):
        z = X @ w + b
        p = _sigmoid(z)
        # log(1 + e^z) - y z, written stably
        nll = np.mean(np.logaddexp(0.0, z) - y * z)
        history.append(float(nll + 0.5 * config.l2 * w @ w))
        r = (p - y) / n
        w = w - config.learning_rate * (X.T @ r + config.l2 * w)
        b = b - config.learning_rate * r.sum()
    if not np.all(np.isfinite(w)):
        raise ValidationError("student training diverged; lower the learning rate")
    return StudentModel(w, float(b), loss_history=history)


def student_as_oracle(model: StudentModel, embeddings):
    """Verdict function: Yes when the homophily probability is at least the threshold."""
    E = np.asarray(embeddings, dtype=np.float64)

    def oracle(u, v):
        p = float(_sigmoid(pair_features(E, u, v) @ model.weights + model.bias))
        yes = p >= model.threshold
        return OracleVerdict(Verdict.YES if yes else Verdict.NO, f"{p:.6f}")

    oracle.key = f"student:{RECIPE}"
    return oracle


def student_verdicts(model: StudentModel, embeddings, pairs):
    """Vectorised student verdicts for many pairs at once."""
    keys = [canonical(u, v) for u, v in pairs]
    probs = model.probability(embeddings, keys)
    return {
        k: OracleVerdict(Verdict.YES if p >= model.threshold else Verdict.NO, f"{p:.6f}")
        for k, p in zip(keys, probs)
    }


class Agreement(NamedTuple):
    agreement: float
    student_f1: float
    teacher_f1: float


def agreement_metrics(student, teacher, truth) -> Agreement:
    if not truth:
        raise ValidationError("agreement metrics need at least one pair")
    s = {r.key: student(*r.key) for r in truth}
    t = {r.key: teacher(*r.key) for r in truth}
    agree = np.mean([s[k].value is t[k].value for k in s])
    return Agreement(float(agree), edge_f1(s, truth)[2], edge_f1(t, truth)[2])
