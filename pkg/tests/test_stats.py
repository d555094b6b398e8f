import csv
import math
import os
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dactext.corpus import LabeledDocument
from dactext.explain import Explanation
from dactext.stats import (Attribution, StatsError, association_from_counts, association_tsv,
                           attribution_estimate, build_association_table, count_word_occurrence,
                           enumerate_2x3, fisher_exact_2x2, fisher_exact_2x2_rational, fisher_exact_2x3,
                           fisher_exact_2x3_rational, format_pvalue, ASSOCIATION_COLUMNS)

scipy_stats = pytest.importorskip("scipy.stats")

DATA = os.path.join(os.path.dirname(__file__), "data", "published_counts.tsv")


def test_small_2x2_values():
    assert fisher_exact_2x2([[3, 1], [1, 3]]).pvalue == pytest.approx(0.485714, abs=1e-6)
    assert fisher_exact_2x2_rational([[3, 1], [1, 3]]) == Fraction(34, 70)
    assert fisher_exact_2x2([[5, 5], [5, 5]]).pvalue == 1.0


def test_degenerate_margins():
    r = fisher_exact_2x2([[0, 0], [3, 4]])
    assert r.pvalue == 1.0 and r.degenerate
    assert fisher_exact_2x3([[0, 0, 0], [1, 2, 3]]).degenerate


def test_negative_or_ragged_tables_rejected():
    with pytest.raises(StatsError):
        fisher_exact_2x2([[1, -1], [0, 2]])
    with pytest.raises(StatsError):
        fisher_exact_2x3([[1, 2], [3, 4]])


@settings(max_examples=150, deadline=None)
@given(st.lists(st.integers(0, 30), min_size=4, max_size=4))
def test_2x2_matches_scipy(cells):
    t = [cells[:2], cells[2:]]
    ref = scipy_stats.fisher_exact(t).pvalue
    assert fisher_exact_2x2(t).pvalue == pytest.approx(min(ref, 1.0), rel=1e-8, abs=1e-300)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 8), min_size=6, max_size=6))
def test_2x3_matches_rational_enumeration(cells):
    t = [cells[:3], cells[3:]]
    res = fisher_exact_2x3(t, cross_check=False)
    if res.degenerate:
        return
    assert res.pvalue == pytest.approx(float(fisher_exact_2x3_rational(t)), rel=1e-10)


def test_2x3_small_value_and_mass():
    assert fisher_exact_2x3([[2, 0, 0], [0, 1, 1]]).pvalue == pytest.approx(1 / 3, rel=1e-12)
    tables = enumerate_2x3([[3, 2, 4], [1, 5, 2]])
    assert sum(p for _, p in tables) == 1


def test_one_sided_2x2_matches_scipy():
    t = [[8, 2], [1, 5]]
    for alt in ("less", "greater"):
        assert fisher_exact_2x2(t, alt).pvalue == pytest.approx(scipy_stats.fisher_exact(t, alt).pvalue, rel=1e-10)


def test_extreme_tables_stay_in_log_space():
    r = fisher_exact_2x2([[320, 0], [209, 111]])
    assert r.log10_pvalue == pytest.approx(math.log10(6.956774e-39), abs=1e-6)
    r = fisher_exact_2x3([[500, 0, 0], [0, 250, 250]], cross_check=False)
    assert r.pvalue < 1e-200 and np.isfinite(r.log_pvalue)


def _published_rows():
    with open(DATA) as fh:
        return list(csv.DictReader(fh, delimiter="\t"))


def test_published_occurrence_pvalues_reproduce():
    for row in _published_rows():
        rec = association_from_counts(row["site"], row["word"],
                                      *(int(row[c]) for c in ("n_correct", "n_abstained", "in_correct",
                                                              "in_abstained", "id_correct", "pos_correct",
                                                              "id_abstained", "pos_abstained")))
        assert abs(rec.occurrence.log10_pvalue - math.log10(float(row["occurrence_p"]))) <= 0.1, row


def test_word_occurrence_counts_documents_once():
    docs = [LabeledDocument("a", "Metastatic tumor, metastasis", np.array([2]), {}),
            LabeledDocument("b", "no spread", np.array([2]), {})]
    assert count_word_occurrence(docs, "metast") == 1


def test_association_table_rows_and_columns():
    docs = {c: [LabeledDocument(f"{c}{i}", "metastatic node" if i % 2 else "lymph", np.array([2]), {})
                for i in range(4)] for c in ("c", "a")}
    exps = {d.doc_id: Explanation(d.doc_id, "site", 0, "0", [(0, d.text.split()[0], 0.1)], 0.5)
            for side in docs.values() for d in side}
    recs = build_association_table({0: (docs["c"], docs["a"])}, exps, ["metast", "lymph", "node"], ["breast"])
    assert [r.stem for r in recs] == ["metast", "lymph", "node"]
    assert recs[0].in_correct == 2 and recs[0].id_correct == 2 and recs[2].id_correct == 0
    assert association_tsv(recs).splitlines()[0].split("\t") == ASSOCIATION_COLUMNS
    with pytest.raises(StatsError):
        build_association_table({0: (docs["c"], docs["a"])}, exps, [])
    with pytest.raises(StatsError, match="missing explanations"):
        build_association_table({0: (docs["c"], docs["a"])}, {}, ["node"])


def test_attribution_truncates():
    a = attribution_estimate(0.53, 0.77, 0.65)
    assert a.value == pytest.approx(0.265265) and a.percent == 26
    assert Attribution(1.0, 1.0, 0.5).percent == 50
    with pytest.raises(StatsError):
        Attribution(1.2, 0.5, 0.5)


def test_format_pvalue_two_figures():
    assert format_pvalue(fisher_exact_2x2([[320, 0], [209, 111]])) == "7.0e-39"
