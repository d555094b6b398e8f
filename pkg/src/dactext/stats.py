"""Exact Fisher tests, word-association tables and abstention attribution.

Both tests are two-sided in the probability-mass sense: the p-value is the
total probability, under the (multivariate) hypergeometric null with the
observed margins, of every table no more probable than the observed one.
Probabilities are handled in log space via log-factorials; for tables with
at most ``EXACT_LIMIT`` observations the result is cross-checked against an
exact rational enumeration.
"""
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import kernels
from .corpus import split_words
from .model import ABSTAIN

EXACT_LIMIT = 40
CROSS_CHECK_RTOL = 1e-10


class StatsError(ValueError):
    pass


def _log_factorials(n):
    return np.array([math.lgamma(i + 1.0) for i in range(n + 1)])


def _tie_tol(log_fact_n):
    # ties decided within 1e-12 relative to the log-factorial scale
    return 1e-12 * (1.0 + log_fact_n)


@dataclass(frozen=True)
class FisherResult:
    pvalue: float
    log_pvalue: float
    degenerate: bool = False
    total_probability: float = 1.0

    @property
    def log10_pvalue(self):
        return self.log_pvalue / math.log(10.0)

    def __float__(self):
        return self.pvalue


def _check_table(t, shape):
    arr = np.asarray(t)
    if arr.shape != shape:
        raise StatsError(f"expected a {shape[0]}x{shape[1]} table, got shape {arr.shape}")
    if np.any(arr < 0) or np.any(arr != np.floor(arr)):
        raise StatsError("table cells must be non-negative integers")
    return [[int(v) for v in row] for row in arr]


def _result(log_obs, rel_sum, excluded):
    """p = included / (included + excluded), normalised by the enumerated mass.

    ``rel_sum`` is the included mass relative to the observed table and
    ``excluded`` the absolute mass of the more probable tables. Normalising
    cancels rounding in the log-factorial constant, and p is exactly 1 when
    nothing is excluded.
    """
    log_incl = log_obs + math.log(rel_sum)
    logp = 0.0 if excluded == 0.0 else min(0.0, log_incl - float(np.logaddexp(log_incl, math.log(excluded))))
    return FisherResult(math.exp(logp), logp, False, math.exp(min(log_incl, 700.0)) + excluded)


def fisher_exact_2x2(table, alternative="two-sided", cross_check=True):
    """Fisher exact test on ``[[a, b], [c, d]]``.

    ``alternative`` may also be ``"less"`` or ``"greater"`` (one-sided in the
    upper-left cell). A table with a single admissible arrangement (all zero,
    or a zero margin) returns p = 1 flagged degenerate.
    """
    (a, b), (c, d) = _check_table(table, (2, 2))
    r0, r1, c0 = a + b, c + d, a + c
    n = r0 + r1
    lo, hi = max(0, c0 - r1), min(r0, c0)
    if lo == hi:
        return FisherResult(1.0, 0.0, True)
    lg = _log_factorials(n)
    const = lg[r0] + lg[r1] + lg[c0] + lg[n - c0] - lg[n]
    x = np.arange(lo, hi + 1)
    lp = const - lg[x] - lg[r0 - x] - lg[c0 - x] - lg[r1 - c0 + x]
    log_obs = lp[a - lo]
    if alternative == "two-sided":
        keep = lp <= log_obs + _tie_tol(lg[n])
    elif alternative == "less":
        keep = x <= a
    elif alternative == "greater":
        keep = x >= a
    else:
        raise StatsError(f"unknown alternative {alternative!r}")
    res = _result(log_obs, float(np.exp(lp[keep] - log_obs).sum()), float(np.exp(lp[~keep]).sum()))
    if cross_check and n <= EXACT_LIMIT:
        exact = float(fisher_exact_2x2_rational(table, alternative))
        if abs(exact - res.pvalue) > CROSS_CHECK_RTOL * exact:
            raise ArithmeticError(f"log-space p {res.pvalue!r} disagrees with exact {exact!r}")
    return res


def fisher_exact_2x2_rational(table, alternative="two-sided"):
    """Exact rational p-value by full hypergeometric enumeration."""
    (a, b), (c, d) = _check_table(table, (2, 2))
    r0, r1, c0 = a + b, c + d, a + c
    n = r0 + r1
    denom = math.comb(n, c0)
    probs = {x: Fraction(math.comb(r0, x) * math.comb(r1, c0 - x), denom)
             for x in range(max(0, c0 - r1), min(r0, c0) + 1)}
    obs = probs[a]
    if alternative == "two-sided":
        return sum((p for p in probs.values() if p <= obs), Fraction(0))
    if alternative == "less":
        return sum((p for x, p in probs.items() if x <= a), Fraction(0))
    if alternative == "greater":
        return sum((p for x, p in probs.items() if x >= a), Fraction(0))
    raise StatsError(f"unknown alternative {alternative!r}")


def fisher_exact_2x3(table, cross_check=True):
    """Fisher exact test on a 2x3 table (two free cells given the margins)."""
    t = _check_table(table, (2, 3))
    r0 = sum(t[0])
    r1 = sum(t[1])
    cols = [t[0][j] + t[1][j] for j in range(3)]
    n = r0 + r1
    if r0 == 0 or r1 == 0 or sum(1 for c in cols if c > 0) < 2:
        return FisherResult(1.0, 0.0, True)
    lg = _log_factorials(n)
    log_obs = (lg[r0] + lg[r1] + sum(lg[c] for c in cols) - lg[n]
               - sum(lg[v] for row in t for v in row))
    rel_sum, excluded = kernels.fisher_2x3_sums(r0, cols[0], cols[1], cols[2], float(log_obs),
                                                _tie_tol(lg[n]), lg)
    res = _result(float(log_obs), rel_sum, excluded)
    if cross_check and n <= EXACT_LIMIT:
        exact = float(fisher_exact_2x3_rational(table))
        if abs(exact - res.pvalue) > CROSS_CHECK_RTOL * exact:
            raise ArithmeticError(f"log-space p {res.pvalue!r} disagrees with exact {exact!r}")
    return res


def _table_prob_2x3(t, r, cols, n):
    num = math.prod(math.factorial(v) for v in r + cols)
    den = math.factorial(n) * math.prod(math.factorial(v) for row in t for v in row)
    return Fraction(num, den)


def enumerate_2x3(table):
    """Every 2x3 table with the margins of ``table``, with its exact probability."""
    t = _check_table(table, (2, 3))
    r = [sum(t[0]), sum(t[1])]
    cols = [t[0][j] + t[1][j] for j in range(3)]
    n = sum(r)
    out = []
    for a in range(0, min(r[0], cols[0]) + 1):
        for b in range(0, min(r[0] - a, cols[1]) + 1):
            c = r[0] - a - b
            if c > cols[2]:
                continue
            cand = [[a, b, c], [cols[0] - a, cols[1] - b, cols[2] - c]]
            out.append((cand, _table_prob_2x3(cand, r, cols, n)))
    return out


def fisher_exact_2x3_rational(table):
    t = _check_table(table, (2, 3))
    tables = enumerate_2x3(t)
    obs = next(p for cand, p in tables if cand == t)
    return sum((p for _, p in tables if p <= obs), Fraction(0))


# -- word association ---------------------------------------------------------------

def _words(doc):
    if isinstance(doc, str):
        return split_words(doc)
    text = getattr(doc, "text", None)
    if text is not None:
        return split_words(text)
    return [str(w).lower() for w in doc]


def count_word_occurrence(docs, stem):
    """Number of documents containing at least one token starting with ``stem``."""
    if not stem:
        raise StatsError("stem must be non-empty")
    stem = stem.lower()
    return sum(1 for d in docs if any(w.startswith(stem) for w in _words(d)))


NOT_PICKED_GROUP = "group"
NOT_PICKED_IN_REPORT = "in_report"


@dataclass
class AssociationRecord:
    """One (class, stem) row.

    Counts: documents in each group (``n_*``), documents containing the stem
    (``in_*``), documents where the explanation picked a stem instance
    (``id_*``) and, of those, where its coefficient was positive (``pos_*``).
    """

    cls: str
    stem: str
    n_correct: int
    n_abstained: int
    in_correct: int
    in_abstained: int
    id_correct: int
    pos_correct: int
    id_abstained: int
    pos_abstained: int
    occurrence: FisherResult = None
    pickup: FisherResult = None
    not_picked: str = NOT_PICKED_GROUP

    def __post_init__(self):
        for side in ("correct", "abstained"):
            n, i, d, p = (getattr(self, f"{k}_{side}") for k in ("n", "in", "id", "pos"))
            if not 0 <= p <= d <= i <= n:
                raise StatsError(f"{self.cls}/{self.stem} {side}: need 0 <= positive <= picked <= in-report <= total, "
                                 f"got {p}, {d}, {i}, {n}")

    def occurrence_table(self):
        return [[self.in_correct, self.n_correct - self.in_correct],
                [self.in_abstained, self.n_abstained - self.in_abstained]]

    def pickup_table(self):
        """Columns: not picked, picked with positive, picked with negative coefficient.

        With ``not_picked="group"`` the first column counts every document of
        the group without a pickup (including those lacking the word); with
        ``"in_report"`` only documents containing the word.
        """
        rows = []
        for side in ("correct", "abstained"):
            n, i, d, p = (getattr(self, f"{k}_{side}") for k in ("n", "in", "id", "pos"))
            base = n if self.not_picked == NOT_PICKED_GROUP else i
            rows.append([base - d, p, d - p])
        return rows

    def compute(self):
        self.occurrence = fisher_exact_2x2(self.occurrence_table())
        self.pickup = fisher_exact_2x3(self.pickup_table())
        return self


def association_from_counts(cls, stem, n_correct, n_abstained, in_correct, in_abstained,
                            id_correct, pos_correct, id_abstained, pos_abstained,
                            not_picked=NOT_PICKED_GROUP):
    if not_picked not in (NOT_PICKED_GROUP, NOT_PICKED_IN_REPORT):
        raise StatsError(f"unknown not_picked mode {not_picked!r}")
    return AssociationRecord(cls, stem, n_correct, n_abstained, in_correct, in_abstained,
                             id_correct, pos_correct, id_abstained, pos_abstained,
                             not_picked=not_picked).compute()


def _picked(explanation, stem):
    """Coefficient of the strongest picked instance matching ``stem``, or None."""
    for _, tok, coef in explanation.entries:  # entries are sorted by |coef|
        if tok.lower().startswith(stem):
            return coef
    return None


def select_groups(preds, corpus, task, sample_per_class=None, rng=None):
    """Per gold class: (correctly classified docs, abstained docs).

    With ``sample_per_class`` each group is subsampled without replacement to
    at most that many documents.
    """
    col = preds.column(task)
    by_id = corpus.by_id()
    groups = {}
    for c in sorted(set(int(g) for g in preds.gold[:, col])):
        gold = preds.gold[:, col] == c
        correct = [preds.doc_ids[i] for i in np.flatnonzero(gold & (preds.pred[:, col] == c))]
        abst = [preds.doc_ids[i] for i in np.flatnonzero(gold & (preds.pred[:, col] == ABSTAIN))]
        if sample_per_class is not None:
            if rng is None:
                raise StatsError("sampling needs an rng")
            correct = [correct[i] for i in sorted(rng.permutation(len(correct))[:sample_per_class])]
            abst = [abst[i] for i in sorted(rng.permutation(len(abst))[:sample_per_class])]
        groups[c] = ([by_id[i] for i in correct], [by_id[i] for i in abst])
    return groups


def build_association_table(groups, explanations, stems, class_names=None, not_picked=NOT_PICKED_GROUP):
    """Association records for every (class, stem).

    ``groups`` maps class to (correct docs, abstained docs) as returned by
    :func:`select_groups`; ``explanations`` maps doc_id to the Explanation of
    that document's predicted class.
    """
    if not stems:
        raise StatsError("stem list is empty")
    stems = [s.lower() for s in stems]
    missing = sorted(d.doc_id for c, (cor, ab) in groups.items() for d in cor + ab
                     if d.doc_id not in explanations)
    if missing:
        raise StatsError(f"missing explanations for doc_ids: {', '.join(missing)}")
    records = []
    for c, (cor, ab) in groups.items():
        name = class_names[c] if class_names else str(c)
        for stem in stems:
            counts = []
            for docs in (cor, ab):
                has = [d for d in docs if count_word_occurrence([d], stem)]
                coefs = [_picked(explanations[d.doc_id], stem) for d in has]
                picked = [x for x in coefs if x is not None]
                counts.append((len(docs), len(has), len(picked), sum(1 for x in picked if x > 0)))
            (nc, ic, dc, pc), (na, ia, da, pa) = counts
            records.append(association_from_counts(name, stem, nc, na, ic, ia, dc, pc, da, pa, not_picked))
    return records


def _cell(k, base):
    return f"{k}({round(100 * k / base) if base else 0})"


def format_pvalue(res, stars=()):
    """Two significant figures; ``stars`` is a list of (threshold, symbol), tightest first."""
    text = f"{res.pvalue:.1e}" if res.pvalue > 0 else f"1e{res.log10_pvalue:.1f}"
    for thr, sym in stars:
        if res.pvalue < thr:
            return text + sym
    return text


ASSOCIATION_COLUMNS = ["site", "word", "in_report_correct", "in_report_abstained",
                       "lime_id_correct", "lime_positive_correct", "lime_id_abstained",
                       "lime_positive_abstained", "occurrence_pvalue", "lime_pickup_pvalue",
                       "n_correct", "n_abstained", "occurrence_log10p", "pickup_log10p"]


def _log10(res):
    return f"{round(res.log10_pvalue, 4) + 0.0:.4f}"


def association_tsv(records, stars=()):
    lines = ["\t".join(ASSOCIATION_COLUMNS)]
    for r in records:
        lines.append("\t".join([
            r.cls, r.stem,
            _cell(r.in_correct, r.n_correct), _cell(r.in_abstained, r.n_abstained),
            _cell(r.id_correct, r.in_correct), _cell(r.pos_correct, r.id_correct),
            _cell(r.id_abstained, r.in_abstained), _cell(r.pos_abstained, r.id_abstained),
            format_pvalue(r.occurrence, stars), format_pvalue(r.pickup, stars),
            str(r.n_correct), str(r.n_abstained),
            _log10(r.occurrence), _log10(r.pickup)]))
    return "\n".join(lines) + "\n"


# -- attribution ---------------------------------------------------------------------

@dataclass(frozen=True)
class Attribution:
    frac_in_abstained: float
    frac_lime_id: float
    frac_positive: float

    def __post_init__(self):
        for v in (self.frac_in_abstained, self.frac_lime_id, self.frac_positive):
            if not 0.0 <= v <= 1.0:
                raise StatsError(f"fraction {v} outside [0, 1]")

    @property
    def value(self):
        return self.frac_in_abstained * self.frac_lime_id * self.frac_positive

    @property
    def percent(self):
        """Whole percent, truncated toward zero."""
        return math.floor(100.0 * self.value + 1e-9)

    def describe(self):
        return (f"{self.frac_in_abstained:.2f}x{self.frac_lime_id:.2f}x{self.frac_positive:.2f}"
                f" = {self.value:.4f} ({self.percent}%)")


def attribution_estimate(frac_in_abstained, frac_lime_id, frac_positive):
    return Attribution(frac_in_abstained, frac_lime_id, frac_positive)


def attribution_from_record(rec):
    """Fraction of abstentions attributable to the stem for one record."""
    f_in = rec.in_abstained / rec.n_abstained if rec.n_abstained else 0.0
    f_id = rec.id_abstained / rec.in_abstained if rec.in_abstained else 0.0
    f_pos = rec.pos_abstained / rec.id_abstained if rec.id_abstained else 0.0
    return Attribution(f_in, f_id, f_pos)
