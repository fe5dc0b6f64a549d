import json
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from xlsent.corpus_eval import (
    ParallelCorpus,
    corpus_stats,
    evaluate,
    format_row,
    format_table,
    format_tsv,
    load_index_labels,
    load_parallel,
    project_labels,
    round_half_up,
)
from xlsent.errors import DataFormatError

labels = st.lists(st.sampled_from(["neg", "pos"]), min_size=1, max_size=60)


def from_confusion(nn, np_, pn, pp):
    """Rows gold, columns predicted."""
    gold = ["neg"] * (nn + np_) + ["pos"] * (pn + pp)
    pred = ["neg"] * nn + ["pos"] * np_ + ["neg"] * pn + ["pos"] * pp
    return pred, gold


def five_language_corpus(n=80):
    langs = ["eng", "fin", "kpv", "mdf", "myv"]
    return ParallelCorpus(langs, {l: [[f"{l}{i}", "x"] for i in range(n)] for l in langs})


class TestEvaluate:
    def test_hand_computed_fixture(self):
        rep = evaluate(*from_confusion(5, 2, 2, 5))
        neg = rep.per_label["neg"]
        assert (neg.precision, neg.recall) == (5 / 7, 5 / 7)
        assert rep.accuracy == 10 / 14
        assert rep.confusion == ((5, 2), (2, 5))
        assert format_row(rep) == "neg 0.71 0.71 0.71, pos 0.71 0.71 0.71, accuracy 0.71"

    def test_asymmetric_fixture_exact(self):
        rep = evaluate(*from_confusion(6, 1, 3, 4))
        p, r = Fraction(6, 9), Fraction(6, 7)
        assert rep.per_label["neg"].precision == float(p)
        assert rep.per_label["neg"].recall == float(r)
        assert rep.per_label["neg"].f1 == pytest.approx(float(2 * p * r / (p + r)), abs=1e-15)
        assert rep.per_label["pos"].support == 7

    def test_table_row_shape(self):
        rep = evaluate(*from_confusion(47, 15, 14, 45))
        assert format_row(rep) == "neg 0.77 0.76 0.76, pos 0.75 0.76 0.76, accuracy 0.76"

    def test_zero_denominator(self):
        rep = evaluate(["pos", "pos"], ["neg", "pos"])
        neg = rep.per_label["neg"]
        assert (neg.precision, neg.recall, neg.f1) == (0.0, 0.0, 0.0)

    def test_errors(self):
        with pytest.raises(ValueError):
            evaluate(["neg"], ["neg", "pos"])
        with pytest.raises(ValueError):
            evaluate([], [])
        with pytest.raises(ValueError):
            evaluate(["neutral"], ["neg"])

    @given(labels)
    def test_perfect_predictions(self, p):
        rep = evaluate(p, p)
        assert rep.accuracy == 1.0
        for lab in set(p):
            m = rep.per_label[lab]
            assert (m.precision, m.recall, m.f1) == (1.0, 1.0, 1.0)

    @given(st.data())
    def test_swap_transposes(self, data):
        gold = data.draw(labels)
        pred = data.draw(st.lists(st.sampled_from(["neg", "pos"]), min_size=len(gold), max_size=len(gold)))
        a, b = evaluate(pred, gold), evaluate(gold, pred)
        assert np.array_equal(np.array(a.confusion).T, np.array(b.confusion))
        for lab in ("neg", "pos"):
            assert a.per_label[lab].precision == b.per_label[lab].recall
            assert a.per_label[lab].recall == b.per_label[lab].precision

    @given(st.data())
    def test_accuracy_is_support_weighted_recall(self, data):
        gold = data.draw(labels)
        pred = data.draw(st.lists(st.sampled_from(["neg", "pos"]), min_size=len(gold), max_size=len(gold)))
        rep = evaluate(pred, gold)
        weighted = sum(m.recall * m.support for m in rep.per_label.values()) / len(gold)
        assert rep.accuracy == pytest.approx(weighted, abs=1e-12)
        assert rep.total == len(gold)


class TestFormatting:
    @pytest.mark.parametrize("x,out", [(0.755, "0.76"), (0.745, "0.75"), (0.125, "0.13"), (1.0, "1.00"), (0.0, "0.00")])
    def test_half_up(self, x, out):
        assert round_half_up(x) == out

    def test_table_and_tsv(self):
        reps = {"eng": evaluate(*from_confusion(47, 15, 14, 45)), "kpv": evaluate(*from_confusion(5, 2, 2, 5))}
        table = format_table(reps).splitlines()
        assert table[0].split() == ["Language", "Label", "Precision", "Recall", "F1-Score", "Accuracy"]
        assert table[2].split() == ["eng", "neg", "0.77", "0.76", "0.76", "0.76"]
        assert table[3].split() == ["pos", "0.75", "0.76", "0.76"]
        tsv = format_tsv(reps).splitlines()
        assert len(tsv) == 5 and tsv[1].split("\t")[:2] == ["eng", "neg"]

    def test_to_dict_is_json(self):
        d = evaluate(*from_confusion(1, 2, 3, 4)).to_dict()
        assert json.loads(json.dumps(d))["confusion"] == [[1, 2], [3, 4]]


class TestProjection:
    def test_sixty_eight_sentences(self):
        corpus = five_language_corpus()
        labels_in = [(i, "neg") for i in range(35)] + [(i, "pos") for i in range(40, 73)]
        out = project_labels(corpus, labels_in, "eng")
        assert len(out) == 5
        for lang, rows in out.items():
            assert len(rows) == 68
            assert sum(r.label == "neg" for r in rows) == 35
            assert all(r.language == lang for r in rows)
        assert [(int(r.tokens[0][3:]), r.label) for r in out["eng"]] == labels_in
        assert out["kpv"][0].tokens == ("kpv0", "x")

    def test_empty_labels(self):
        assert all(v == [] for v in project_labels(five_language_corpus(3), [], "fin").values())

    def test_repeated_consistent_label_ok(self):
        out = project_labels(five_language_corpus(3), [(1, "pos"), (1, "pos")], "eng")
        assert len(out["eng"]) == 1

    @pytest.mark.parametrize("bad", [[(3, "pos")], [(-1, "pos")], [(0, "pos"), (0, "neg")], [(0, "meh")]])
    def test_errors(self, bad):
        with pytest.raises(ValueError):
            project_labels(five_language_corpus(3), bad, "eng")

    def test_unknown_source(self):
        with pytest.raises(ValueError):
            project_labels(five_language_corpus(3), [], "udm")

    def test_misaligned_corpus(self):
        with pytest.raises(ValueError):
            ParallelCorpus(["a", "b"], {"a": [["x"]], "b": []})


class TestIo:
    def test_load_parallel_and_stats(self, tmp_path):
        (tmp_path / "a.txt").write_text("x y\n\nz\n", encoding="utf-8")
        (tmp_path / "b.txt").write_text("p\nq\nr s t\n", encoding="utf-8")
        (tmp_path / "m.json").write_text(json.dumps({"languages": ["a", "b"], "files": {"a": "a.txt", "b": "b.txt"}}))
        corpus = load_parallel(tmp_path / "m.json")
        assert len(corpus) == 3
        assert corpus_stats(corpus) == {"a": {"tokens": 3, "sentences": 2}, "b": {"tokens": 5, "sentences": 3}}

    def test_load_parallel_misaligned(self, tmp_path):
        (tmp_path / "a.txt").write_text("x\n", encoding="utf-8")
        (tmp_path / "b.txt").write_text("p\nq\n", encoding="utf-8")
        (tmp_path / "m.json").write_text(json.dumps({"languages": ["a", "b"], "files": {"a": "a.txt", "b": "b.txt"}}))
        with pytest.raises(DataFormatError, match="not aligned"):
            load_parallel(tmp_path / "m.json")

    def test_stats_empty_and_order(self):
        assert corpus_stats(ParallelCorpus(["a"], {"a": []})) == {"a": {"tokens": 0, "sentences": 0}}
        c1 = ParallelCorpus(["a", "b"], {"a": [["x"]], "b": [["y", "z"]]})
        c2 = ParallelCorpus(["b", "a"], {"a": [["x"]], "b": [["y", "z"]]})
        assert corpus_stats(c1) == corpus_stats(c2)

    def test_index_labels(self, tmp_path):
        p = tmp_path / "l.tsv"
        p.write_text("0\tneg\n5\tpos\n", encoding="utf-8")
        assert load_index_labels(p) == [(0, "neg"), (5, "pos")]
        p.write_text("zero\tneg\n", encoding="utf-8")
        with pytest.raises(DataFormatError):
            load_index_labels(p)
