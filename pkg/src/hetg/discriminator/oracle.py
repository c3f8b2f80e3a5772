"""Verdicts, oracle implementations, the persistent verdict cache and edge F1."""

from __future__ import annotations

import base64
import enum
import hashlib
import logging
import re
import threading
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass
from pathlib import Path

from hetg.errors import ParseError, ValidationError
from hetg.graph import TextGraph
from hetg.pairs import Relation, canonical

logger = logging.getLogger(__name__)

_WORD = re.compile(r"[A-Za-z]+")


class Verdict(enum.Enum):
    YES = "yes"
    NO = "no"
    UNPARSEABLE = "unparseable"

    @classmethod
    def from_relation(cls, relation: Relation):
        return cls.YES if relation is Relation.HOMO else cls.NO

    def relation(self):
        return {Verdict.YES: Relation.HOMO, Verdict.NO: Relation.HETERO}.get(self)


@dataclass(frozen=True)
class OracleVerdict:
    value: Verdict
    raw: str = ""


def parse_verdict(reply) -> OracleVerdict:
    """Map a free-text reply onto Yes / No / Unparseable using its first word."""
    reply = "" if reply is None else str(reply)
    m = _WORD.search(reply)
    word = m.group(0).lower() if m else ""
    value = {"yes": Verdict.YES, "no": Verdict.NO}.get(word, Verdict.UNPARSEABLE)
    return OracleVerdict(value, reply)


def _unit_hash(*parts) -> float:
    h = hashlib.blake2b(repr(parts).encode("ascii"), digest_size=8).digest()
    return int.from_bytes(h, "little") / 2.0**64


def synthetic_oracle(graph: TextGraph, accuracy, seed=0):
    """Oracle that reports the true relation with probability ``accuracy``.

    The coin for each pair is a hash of ``(seed, min(u, v), max(u, v))`` so the
    verdict is reproducible, symmetric, and independent of query order.
    """
    accuracy = float(accuracy)
    if not 0.0 <= accuracy <= 1.0:
        raise ValidationError(f"oracle accuracy must lie in [0, 1], got {accuracy}")
    labels = graph.labels

    def oracle(u, v):
        a, b = canonical(u, v)
        same = labels[a] == labels[b]
        if _unit_hash("synthetic", seed, a, b) >= accuracy:
            same = not same
        return OracleVerdict(Verdict.YES if same else Verdict.NO, "Yes" if same else "No")

    oracle.key = f"synthetic:{accuracy!r}:{seed}"
    return oracle


def ground_truth_oracle(graph: TextGraph):
    oracle = synthetic_oracle(graph, 1.0)
    oracle.key = "truth"
    return oracle


class VerdictCache:
    """Verdicts persisted as TSV ``u, v, verdict, raw_base64, template_hash``.

    One cache file belongs to one dataset. Entries recorded under a different
    template hash are kept on disk but never served. Every ``put`` appends a
    line immediately so an interrupted run can resume; ``flush`` rewrites the
    file sorted by key.
    """

    def __init__(self, path=None, template_hash="default", dataset_id="graph"):
        self.path = Path(path) if path is not None else None
        self.template_hash = template_hash
        self.dataset_id = dataset_id
        self._entries = {}
        self._lock = threading.Lock()
        if self.path is not None and self.path.exists():
            self._load()

    def _load(self):
        with self.path.open(encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                parts = line.rstrip("\n").split("\t")
                try:
                    u, v = int(parts[0]), int(parts[1])
                    value = Verdict(parts[2])
                    raw = base64.b64decode(parts[3], validate=True).decode("utf-8")
                    thash = parts[4]
                except (IndexError, ValueError) as exc:
                    raise ParseError(self.path, lineno, f"bad cache record ({exc})") from None
                self._entries[(*canonical(u, v), thash)] = OracleVerdict(value, raw)

    def __len__(self):
        return sum(1 for k in self._entries if k[2] == self.template_hash)

    def get(self, u, v):
        return self._entries.get((*canonical(u, v), self.template_hash))

    def put(self, u, v, verdict: OracleVerdict):
        key = (*canonical(u, v), self.template_hash)
        with self._lock:
            self._entries[key] = verdict
            if self.path is not None:
                with self.path.open("a", encoding="utf-8") as fh:
                    fh.write(self._line(key, verdict))

    @staticmethod
    def _line(key, verdict):
        raw = base64.b64encode(verdict.raw.encode("utf-8")).decode("ascii")
        return f"{key[0]}\t{key[1]}\t{verdict.value.value}\t{raw}\t{key[2]}\n"

    def flush(self):
        if self.path is None:
            return
        with self._lock:
            tmp = self.path.with_suffix(self.path.suffix + ".tmp")
            with tmp.open("w", encoding="utf-8") as fh:
                for key in sorted(self._entries):
                    fh.write(self._line(key, self._entries[key]))
            tmp.replace(self.path)


def discriminate_all(pairs, oracle, cache: VerdictCache | None = None, workers=1):
    """Verdicts for every pair, consulting and filling ``cache``.

    Oracle failures are re-raised only after all successful verdicts have been
    recorded, so rerunning resumes where the failure happened.
    """
    cache = cache if cache is not None else VerdictCache()
    result = {}
    todo = []
    for u, v in pairs:
        key = canonical(u, v)
        hit = cache.get(*key)
        if hit is not None:
            result[key] = hit
        elif key not in result:
            result[key] = None
            todo.append(key)
    errors = []
    if todo:
        logger.info("querying oracle for %d of %d pairs", len(todo), len(result))
    if workers <= 1:
        for key in todo:
            try:
                verdict = oracle(*key)
            except Exception as exc:  # noqa: BLE001 - re-raised below
                errors.append(exc)
                break
            cache.put(*key, verdict)
            result[key] = verdict
    elif todo:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = {pool.submit(oracle, *key): key for key in todo}
            for fut in as_completed(futures):
                key = futures[fut]
                try:
                    verdict = fut.result()
                except Exception as exc:  # noqa: BLE001
                    errors.append(exc)
                    continue
                cache.put(*key, verdict)
                result[key] = verdict
    cache.flush()
    if errors:
        raise errors[0]
    return result


def _f1(tp, fp, fn):
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


def edge_f1(predictions, truth):
    """Per-relation F1 and their unweighted mean.

    Unparseable verdicts count as a miss for the true relation and as a false
    positive for neither.

    Returns
    -------
    tuple of float
        ``(f1_homo, f1_hetero, macro_f1)``
    """
    if not truth:
        raise ValidationError("edge_f1 needs at least one ground-truth pair")
    counts = {Relation.HOMO: [0, 0, 0], Relation.HETERO: [0, 0, 0]}
    for rec in truth:
        pred = predictions.get(rec.key)
        if pred is None:
            raise ValidationError(f"no prediction for pair {rec.key}")
        value = pred.value if isinstance(pred, OracleVerdict) else pred
        predicted = value.relation()
        if predicted is rec.relation:
            counts[rec.relation][0] += 1
        else:
            counts[rec.relation][2] += 1
            if predicted is not None:
                counts[predicted][1] += 1
    f_homo = _f1(*counts[Relation.HOMO])
    f_hetero = _f1(*counts[Relation.HETERO])
    return f_homo, f_hetero, (f_homo + f_hetero) / 2
