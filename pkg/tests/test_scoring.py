import json
import random

import numpy as np
import pytest
from hypothesis import given, strategies as st

from helpers import brute_force_ap
from pstrace.corpus import DatasetEntry, Reference
from pstrace.gcn import GcnModel, ModelConfig, init_model, predict_scores
from pstrace.graph import build_graph
from pstrace.corpus import TeiDocument
from pstrace.scoring import (
    MetricError,
    ScoreTable,
    ScoreTableError,
    average_precision,
    check_coverage,
    ensemble,
    import_score_table,
    map_metric,
    per_paper_ap,
    split_train_val,
    write_score_table,
)


def _entries(n, labeled=True):
    return [DatasetEntry(f"p{i}", "t", (Reference("r", "x"),), frozenset({"r"}) if labeled else frozenset(), labeled)
            for i in range(n)]


class TestAP:
    def test_examples(self):
        assert average_precision([("r1", 0.9), ("r2", 0.1)], {"r1"}) == 1.0
        assert average_precision([("r1", 0.9), ("r2", 0.1)], {"r2"}) == 0.5
        assert average_precision([("a", 0.9), ("b", 0.8), ("c", 0.7)], {"a", "c"}) == pytest.approx(5 / 6, abs=1e-15)
        assert brute_force_ap([("a", 0.9), ("b", 0.8), ("c", 0.7)], {"a", "c"}) == pytest.approx(0.8333, abs=1e-4)

    def test_ties_by_ref_id(self):
        assert average_precision([("b", 0.5), ("a", 0.5)], {"b"}) == 0.5
        assert average_precision([("b", 0.5), ("a", 0.5)], {"a"}) == 1.0

    def test_errors(self):
        with pytest.raises(MetricError):
            average_precision([("a", 0.1)], set())
        with pytest.raises(MetricError):
            average_precision([("a", 0.1)], {"z"})

    @given(st.lists(st.tuples(st.sampled_from("abcdefghij"), st.sampled_from([0.0, 0.25, 0.5, 1.0])),
                    min_size=1, max_size=10, unique_by=lambda x: x[0]),
           st.data())
    def test_bounds_and_perfect(self, scores, data):
        ids = [r for r, _ in scores]
        pos = set(data.draw(st.lists(st.sampled_from(ids), min_size=1, unique=True)))
        ap = average_precision(scores, pos)
        assert 0 < ap <= 1
        assert ap == brute_force_ap(scores, pos)
        ranked = sorted(scores, key=lambda x: (-x[1], x[0]))
        perfect = all(r in pos for r, _ in ranked[: len(pos)])
        assert (ap == 1.0) == perfect


def test_map_metric():
    t = ScoreTable("t", {"p1": {"a": 0.9, "b": 0.1}, "p2": {"a": 0.9, "b": 0.1}, "p3": {"a": 0.2}})
    labels = {"p1": {"a"}, "p2": {"b"}, "p3": set()}
    assert map_metric(t, labels) == 0.75
    assert map_metric(t, {"p2": {"b"}}) == 0.5
    assert per_paper_ap(t, labels) == {"p1": 1.0, "p2": 0.5}
    with pytest.raises(MetricError, match="p9"):
        map_metric(t, {"p9": {"a"}})


class TestEnsemble:
    t1 = ScoreTable("a", {"p": {"x": 1.0, "y": 0.2}})
    t2 = ScoreTable("b", {"p": {"x": 0.0, "y": 0.6}})

    def test_idempotent(self):
        e = ensemble([self.t1, self.t1])
        assert e.scores == self.t1.scores and e.tag == "a+a"

    def test_mean(self):
        e = ensemble([self.t1, self.t2])
        assert e.scores["p"]["x"] == 0.5 and e.scores["p"]["y"] == pytest.approx(0.4)

    def test_degenerate_weights(self):
        assert ensemble([self.t1, self.t2], [1, 0]).scores == self.t1.scores

    def test_key_mismatch(self):
        t3 = ScoreTable("c", {"p": {"x": 0.5, "z": 0.5}})
        with pytest.raises(ScoreTableError, match="'y'.*'z'|'z'.*'y'"):
            ensemble([self.t1, t3])

    def test_bad_weights(self):
        with pytest.raises(ScoreTableError):
            ensemble([self.t1, self.t2], [0, 0])
        with pytest.raises(ScoreTableError):
            ensemble([self.t1, self.t2], [1, -1])
        with pytest.raises(ScoreTableError):
            ensemble([])

    def test_rank_method(self):
        e = ensemble([self.t1, self.t2], method="rank")
        assert e.scores["p"] == {"x": 0.5, "y": 0.5}
        t = ScoreTable("t", {"p": {"a": 0.1, "b": 0.1, "c": 0.9}})
        assert ensemble([t], method="rank").scores["p"] == {"a": 0.25, "b": 0.25, "c": 1.0}

    def test_permutation_invariant_and_affine(self):
        rng = random.Random(0)
        tabs = [ScoreTable(str(k), {"p": {r: rng.random() for r in "abcd"}}) for k in range(3)]
        a = ensemble(tabs).scores["p"]
        b = ensemble(tabs[::-1]).scores["p"]
        for r in a:
            assert a[r] == pytest.approx(b[r], abs=1e-15)
        # affine in one table's scores
        shifted = ScoreTable("s", {"p": {r: 0.5 * s for r, s in tabs[0].scores["p"].items()}})
        c = ensemble([shifted] + tabs[1:]).scores["p"]
        for r in a:
            assert c[r] == pytest.approx(a[r] - tabs[0].scores["p"][r] / 6, abs=1e-15)


class TestImport:
    def test_round_trip(self, tmp_path):
        t = ScoreTable("gcn", {"p1": {"a": 0.25}, "p2": {"b": 1.0, "c": 0.0}})
        write_score_table(t, tmp_path / "s.json")
        back = import_score_table(tmp_path / "s.json", "x")
        assert back.scores == t.scores and back.tag == "x"
        assert import_score_table(tmp_path / "s.json").tag == "gcn"
        assert len(back.scores) == 2

    def test_out_of_range(self, tmp_path):
        (tmp_path / "s.json").write_text('{"tag": "t", "scores": {"p": {"a": 1.5}}}')
        with pytest.raises(ScoreTableError, match=r"\['p'\]\['a'\]"):
            import_score_table(tmp_path / "s.json")

    def test_non_finite(self, tmp_path):
        (tmp_path / "s.json").write_text('{"tag": "t", "scores": {"p": {"a": NaN}}}')
        with pytest.raises(ScoreTableError):
            import_score_table(tmp_path / "s.json")

    def test_duplicate_key(self, tmp_path):
        (tmp_path / "s.json").write_text('{"tag": "t", "scores": {"p": {"a": 0.1, "a": 0.2}}}')
        with pytest.raises(ScoreTableError, match="duplicate"):
            import_score_table(tmp_path / "s.json")

    def test_coverage(self):
        e = [DatasetEntry("p", "t", (Reference("a", "x"), Reference("b", "y")))]
        check_coverage(ScoreTable("t", {"p": {"a": 0.1, "b": 0.2}}), e)
        with pytest.raises(ScoreTableError, match="differ"):
            check_coverage(ScoreTable("t", {"p": {"a": 0.1}}), e)


class TestSplit:
    def test_six(self):
        s = split_train_val(_entries(6), seed=1)
        assert len(s.train) == 4 and len(s.val) == 2
        assert s.train.isdisjoint(s.val) and s.train | s.val == {f"p{i}" for i in range(6)}

    def test_deterministic(self):
        assert split_train_val(_entries(30), seed=5) == split_train_val(_entries(30), seed=5)
        assert split_train_val(_entries(30), seed=5) != split_train_val(_entries(30), seed=6)

    def test_paper_count(self):
        s = split_train_val(_entries(788))
        assert (len(s.train), len(s.val)) == (525, 263)

    def test_too_few_and_unlabeled_excluded(self):
        with pytest.raises(ValueError):
            split_train_val(_entries(1))
        s = split_train_val(_entries(3) + _entries(5, labeled=False)[3:])
        assert len(s.train | s.val) == 3


def test_predict_scores_mask_and_zero_model():
    entry = DatasetEntry("p", "Title", tuple(Reference(f"r{i}", f"t{i}") for i in range(3)))
    g = build_graph(TeiDocument("T", "abstract"), {}, entry, [])
    cfg = ModelConfig((4, 3, 1), epochs=0)
    model = init_model(cfg)
    table = predict_scores(model, [(g, np.ones((g.n, 4)))])
    assert table.scores == {"p": {"r0": 0.5, "r1": 0.5, "r2": 0.5}}
