import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dactext.corpus import CLEAN, CONFUSER, FLIPPED, Corpus, LabeledDocument, Vocabulary
from dactext.metrics import (INFINITE, UNDEFINED, AuditRow, Predictions, abstention_audit, combo_metrics,
                             combos_tsv, metrics_text, metrics_tsv, naive_guess, selective_metrics)
from dactext.model import ABSTAIN, TaskSpec

A = ABSTAIN


def _preds(gold, pred, tasks=("site", "histology")):
    gold, pred = np.array(gold), np.array(pred)
    base = np.where(pred == A, gold, pred)
    return Predictions([f"d{i}" for i in range(len(gold))], list(tasks), gold, pred, base)


def test_selective_counts():
    p = _preds([[0, 1], [1, 1], [2, 0], [0, 0]], [[0, 1], [A, 1], [1, A], [0, A]])
    m = selective_metrics(p)
    assert m["site"].abstention_rate == 0.25
    assert m["site"].retained_accuracy == pytest.approx(2 / 3)
    assert m["histology"].retained_accuracy == 1.0
    all_abs = selective_metrics(_preds([[0, 0]], [[A, A]]))
    assert all_abs["site"].retained_accuracy is None


def test_naive_guess_reference_numbers():
    acc, abst = naive_guess({"site": (0.9880, 0.2446), "histology": (0.9027, 0.3875)}, ["site", "histology"])
    assert (acc, abst) == (0.9027, 0.3875)


def test_combo_joint_rule_and_label():
    p = _preds([[0, 1], [1, 1], [2, 0], [0, 0]], [[0, 1], [A, 1], [1, A], [0, A]])
    c = combo_metrics(p, ["site", "histology"])
    assert c.label == "S,H"
    assert c.abstained == 3 and c.retained_correct == 1
    with pytest.raises(KeyError):
        combo_metrics(p, ["site", "grade"])


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 40), st.integers(0, 10 ** 6))
def test_combo_invariants(n, seed):
    rng = np.random.default_rng(seed)
    gold = rng.integers(0, 3, size=(n, 3))
    pred = np.where(rng.random((n, 3)) < 0.3, A, np.where(rng.random((n, 3)) < 0.7, gold, (gold + 1) % 3))
    p = _preds(gold, pred, ("site", "behavior", "histology"))
    per = selective_metrics(p)
    c = combo_metrics(p, ["site", "behavior", "histology"])
    assert c.abstention_rate >= max(per[t].abstention_rate for t in p.tasks)
    if c.retained:
        for t in p.tasks:
            assert c.retained_accuracy <= c.member_accuracy(t)


def test_enrichment_markers():
    assert AuditRow("site", "x", 2, 4, 1, 10).enrichment == pytest.approx(5.0)
    assert AuditRow("site", "x", 2, 4, 0, 10).enrichment == INFINITE
    assert AuditRow("site", "x", 0, 0, 1, 10).enrichment == UNDEFINED


def test_audit_counts():
    docs = [LabeledDocument(f"d{i}", "", np.array([2]), {"site": 0}, {"site": f}, c)
            for i, (f, c) in enumerate([(CONFUSER, True), (CLEAN, False), (FLIPPED, False), (CLEAN, True)])]
    corp = Corpus(docs, Vocabulary(), [TaskSpec("site", 2)])
    p = Predictions([d.doc_id for d in docs], ["site"], np.zeros((4, 1), int),
                    np.array([[A], [0], [A], [0]]), np.zeros((4, 1), int))
    rows = {r.flag: r for r in abstention_audit(p, corp)}
    assert (rows[CONFUSER].abstained_with, rows[CONFUSER].retained_with) == (1, 0)
    assert (rows["has_confuser"].abstained_with, rows["has_confuser"].retained_with) == (1, 1)


def test_report_formats():
    p = _preds([[0, 1], [1, 1]], [[0, 1], [A, 1]])
    per = selective_metrics(p)
    tsv = metrics_tsv(per).splitlines()
    assert tsv[0].split("\t")[:4] == ["task", "base_acc", "abs_rate", "retained_acc"]
    assert tsv[1].split("\t")[2] == "50.00"
    c = combo_metrics(p, ["site", "histology"])
    assert combos_tsv([c]).splitlines()[1].startswith("S,H\t")
    assert "Accuracy (retained)" in metrics_text(per, [c])
