import base64
import itertools
import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from hetg.discriminator import (
    OracleVerdict,
    PromptTemplate,
    Verdict,
    VerdictCache,
    discriminate_all,
    edge_f1,
    export_finetune,
    parse_verdict,
    render_prompt,
    synthetic_oracle,
)
from hetg.errors import ValidationError
from hetg.pairs import EdgePairRecord, Relation

from conftest import make_graph, random_graph

WEBKB = ["student", "staff", "faculty", "course", "project"]


class TestPrompt:
    g = make_graph([0, 1, 2], [(0, 1)], classes=WEBKB[:3] + WEBKB[3:], texts=["A", "B", ""])

    def test_contains_all_class_names(self):
        text = render_prompt(self.g, 0, 1).rendered
        for name in WEBKB:
            assert name in text

    def test_contains_both_texts_in_id_order(self):
        text = render_prompt(self.g, 1, 0).rendered
        assert "Node 1: A" in text and "Node 2: B" in text

    def test_deterministic(self):
        assert render_prompt(self.g, 0, 1).rendered == render_prompt(self.g, 0, 1).rendered

    def test_four_parts(self):
        p = render_prompt(self.g, 0, 1)
        assert p.rendered == "\n\n".join([p.background, p.task, p.input, p.answer_template])
        assert "Yes" in p.answer_template and "No" in p.answer_template

    def test_empty_text_placeholder(self):
        assert "(no text)" in render_prompt(self.g, 0, 2).rendered

    def test_truncation(self):
        g = make_graph([0, 1], [], texts=["x" * 5000, "y"])
        text = render_prompt(g, 0, 1, PromptTemplate(max_chars=1024)).rendered
        assert "x" * 1024 in text and "x" * 1025 not in text

    def test_self_pair_rejected(self):
        with pytest.raises(ValidationError):
            render_prompt(self.g, 1, 1)

    def test_template_hash_tracks_wording(self):
        assert PromptTemplate().hash == PromptTemplate().hash
        assert PromptTemplate().hash != PromptTemplate(task="Different task.").hash

    def test_finetune_export(self, tmp_path):
        recs = [EdgePairRecord(0, 1, Relation.HETERO), EdgePairRecord(0, 2, Relation.HOMO)]
        export_finetune(self.g, recs, tmp_path / "ft.jsonl")
        lines = [json.loads(x) for x in (tmp_path / "ft.jsonl").read_text().splitlines()]
        assert [x["completion"] for x in lines] == ["No", "Yes"]
        assert lines[0]["prompt"] == render_prompt(self.g, 0, 1).rendered


class TestParseVerdict:
    @pytest.mark.parametrize("reply,value", [
        ("Yes", Verdict.YES),
        ("no, they differ.", Verdict.NO),
        ("They might be related.", Verdict.UNPARSEABLE),
        ("  **YES**", Verdict.YES),
        ("", Verdict.UNPARSEABLE),
        ("Nope", Verdict.UNPARSEABLE),
        ("42 no", Verdict.NO),
    ])
    def test_examples(self, reply, value):
        v = parse_verdict(reply)
        assert v.value is value and v.raw == reply

    @given(st.text())
    def test_total(self, reply):
        assert parse_verdict(reply).value in set(Verdict)


class TestSyntheticOracle:
    g = random_graph(60, 0.5, 3, seed=1)

    def _agreement(self, acc, seed=0):
        o = synthetic_oracle(self.g, acc, seed)
        pairs = list(itertools.combinations(range(self.g.num_nodes), 2))
        truth = [(self.g.labels[u] == self.g.labels[v]) for u, v in pairs]
        return np.mean([(o(u, v).value is Verdict.YES) == t for (u, v), t in zip(pairs, truth)])

    def test_perfect(self):
        assert self._agreement(1.0) == 1.0

    def test_always_flipped(self):
        assert self._agreement(0.0) == 0.0

    def test_half(self):
        # 1770 pairs here; the 10k-pair version lives in the acceptance-style test below
        assert abs(self._agreement(0.5) - 0.5) < 0.05

    def test_half_ten_thousand_pairs(self):
        g = random_graph(150, 0.0, 2, seed=2)
        o = synthetic_oracle(g, 0.5, seed=11)
        pairs = list(itertools.combinations(range(150), 2))[:10_000]
        agree = np.mean([(o(u, v).value is Verdict.YES) == (g.labels[u] == g.labels[v]) for u, v in pairs])
        assert abs(agree - 0.5) <= 0.02

    def test_symmetric_and_deterministic(self):
        o1, o2 = synthetic_oracle(self.g, 0.7, 5), synthetic_oracle(self.g, 0.7, 5)
        for u, v in itertools.combinations(range(20), 2):
            assert o1(u, v) == o1(v, u) == o2(u, v)

    def test_bad_accuracy(self):
        with pytest.raises(ValidationError):
            synthetic_oracle(self.g, 1.5)


class CountingOracle:
    def __init__(self, fail_after=None):
        self.calls = []
        self.fail_after = fail_after
        self.key = "counting"

    def __call__(self, u, v):
        if self.fail_after is not None and len(self.calls) >= self.fail_after:
            raise ConnectionError("interrupted")
        self.calls.append((u, v))
        return OracleVerdict(Verdict.YES if (u + v) % 2 else Verdict.NO, f"raw {u} {v}\ttab")


class TestDiscriminateAll:
    pairs = [(0, 1), (1, 2), (2, 3)]

    def test_all_cached(self, tmp_path):
        cache = VerdictCache(tmp_path / "c.tsv")
        discriminate_all(self.pairs, CountingOracle(), cache)
        oracle = CountingOracle()
        out = discriminate_all(self.pairs, oracle, VerdictCache(tmp_path / "c.tsv"))
        assert oracle.calls == [] and set(out) == set(self.pairs)

    def test_partial_cache(self, tmp_path):
        cache = VerdictCache(tmp_path / "c.tsv")
        cache.put(1, 2, OracleVerdict(Verdict.NO, "No"))
        oracle = CountingOracle()
        out = discriminate_all(self.pairs, oracle, cache)
        assert len(oracle.calls) == 2 and out[(1, 2)].raw == "No"

    @pytest.mark.parametrize("workers", [1, 4])
    def test_resume_after_interruption(self, tmp_path, workers):
        path = tmp_path / "c.tsv"
        with pytest.raises(ConnectionError):
            discriminate_all(self.pairs, CountingOracle(fail_after=2), VerdictCache(path), workers=workers)
        oracle = CountingOracle()
        out = discriminate_all(self.pairs, oracle, VerdictCache(path), workers=workers)
        assert len(oracle.calls) == 1 and len(out) == 3

    def test_idempotent(self, tmp_path):
        path = tmp_path / "c.tsv"
        first = discriminate_all(self.pairs, CountingOracle(), VerdictCache(path))
        again = CountingOracle()
        assert discriminate_all(self.pairs, again, VerdictCache(path)) == first
        assert again.calls == []

    def test_reversed_pairs_share_entries(self, tmp_path):
        oracle = CountingOracle()
        out = discriminate_all([(1, 0), (0, 1)], oracle, VerdictCache())
        assert oracle.calls == [(0, 1)] and list(out) == [(0, 1)]

    def test_template_hash_invalidates(self, tmp_path):
        path = tmp_path / "c.tsv"
        discriminate_all(self.pairs, CountingOracle(), VerdictCache(path, template_hash="v1"))
        oracle = CountingOracle()
        discriminate_all(self.pairs, oracle, VerdictCache(path, template_hash="v2"))
        assert len(oracle.calls) == 3
        # both generations persist, v1 entries untouched
        assert len(VerdictCache(path, template_hash="v1")) == 3

    def test_cache_file_format(self, tmp_path):
        path = tmp_path / "c.tsv"
        discriminate_all([(2, 3), (0, 1)], CountingOracle(), VerdictCache(path, template_hash="h"))
        lines = path.read_text().splitlines()
        assert [ln.split("\t")[:2] for ln in lines] == [["0", "1"], ["2", "3"]]
        u, v, verdict, raw, h = lines[0].split("\t")
        assert verdict == "yes" and h == "h"
        assert base64.b64decode(raw).decode() == "raw 0 1\ttab"


class TestEdgeF1:
    def _truth(self, rels):
        return [EdgePairRecord(i, i + 100, r) for i, r in enumerate(rels)]

    def test_perfect(self):
        truth = self._truth([Relation.HOMO, Relation.HETERO, Relation.HOMO])
        preds = {r.key: OracleVerdict(Verdict.from_relation(r.relation)) for r in truth}
        assert edge_f1(preds, truth) == (1.0, 1.0, 1.0)

    def test_hand_confusion(self):
        H, X = Relation.HOMO, Relation.HETERO
        truth = self._truth([X, X, X, H, H, H])
        pred = [Verdict.NO, Verdict.NO, Verdict.YES, Verdict.YES, Verdict.YES, Verdict.NO]
        f_homo, f_hetero, macro = edge_f1({r.key: OracleVerdict(p) for r, p in zip(truth, pred)}, truth)
        assert f_homo == pytest.approx(2 / 3, abs=1e-15)
        assert f_hetero == pytest.approx(2 / 3, abs=1e-15)
        assert macro == pytest.approx(2 / 3, abs=1e-15)

    def test_all_unparseable(self):
        truth = self._truth([Relation.HOMO, Relation.HETERO])
        preds = {r.key: OracleVerdict(Verdict.UNPARSEABLE, "??") for r in truth}
        assert edge_f1(preds, truth) == (0.0, 0.0, 0.0)

    def test_empty_truth(self):
        with pytest.raises(ValidationError):
            edge_f1({}, [])

    def test_missing_prediction(self):
        with pytest.raises(ValidationError):
            edge_f1({}, self._truth([Relation.HOMO]))

    @given(st.lists(st.tuples(st.booleans(), st.sampled_from(list(Verdict))), min_size=1, max_size=40))
    def test_macro_symmetric_under_relabel(self, items):
        truth = [EdgePairRecord(i, i + 1000, Relation.HOMO if t else Relation.HETERO) for i, (t, _) in enumerate(items)]
        preds = {r.key: OracleVerdict(p) for r, (_, p) in zip(truth, items)}
        flip = {Verdict.YES: Verdict.NO, Verdict.NO: Verdict.YES, Verdict.UNPARSEABLE: Verdict.UNPARSEABLE}
        truth2 = [EdgePairRecord(r.u, r.v, Relation.HETERO if r.relation is Relation.HOMO else Relation.HOMO) for r in truth]
        preds2 = {k: OracleVerdict(flip[v.value]) for k, v in preds.items()}
        a, b = edge_f1(preds, truth), edge_f1(preds2, truth2)
        assert a[2] == pytest.approx(b[2], abs=1e-15)
        assert (a[0], a[1]) == pytest.approx((b[1], b[0]), abs=1e-15)
