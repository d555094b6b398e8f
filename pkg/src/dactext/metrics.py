"""Selective-prediction metrics for single tasks and task combinations.

Predictions are kept as raw per-document records so that every reported
rate can be reconciled with exact counts.
"""
from dataclasses import dataclass

import numpy as np

from .corpus import FLAGS
from .model import ABSTAIN

TASK_CODES = {"site": "S", "behavior": "B", "histology": "H", "laterality": "L",
              "grade": "G", "subsite": "U"}


@dataclass
class Predictions:
    """Per-document, per-task prediction records.

    ``pred`` uses ``ABSTAIN`` for the abstain class; ``base`` is the argmax
    over true classes only (abstention disabled).
    """

    doc_ids: list
    tasks: list
    gold: np.ndarray
    pred: np.ndarray
    base: np.ndarray

    def column(self, task):
        return self.tasks.index(task)

    def abstained(self, task):
        return self.pred[:, self.column(task)] == ABSTAIN


def predict_records(model, corpus, batch_size=256):
    if len(corpus) == 0:
        raise ValueError("cannot evaluate an empty split")
    probs = model.predict_proba(corpus.token_lists(), batch_size=batch_size)
    abstain_enabled = model.metadata.get("abstain", True)
    pred, base = [], []
    for t, p in zip(model.tasks, probs):
        k = t.num_classes
        b = p[:, :k].argmax(axis=1)
        a = p.argmax(axis=1)
        a = np.where(a == k, ABSTAIN, a) if abstain_enabled else b
        pred.append(a)
        base.append(b)
    names = [t.name for t in model.tasks]
    gold = np.array([[d.labels[n] for n in names] for d in corpus.docs], dtype=np.int64)
    return Predictions([d.doc_id for d in corpus.docs], names, gold,
                       np.stack(pred, axis=1), np.stack(base, axis=1))


@dataclass
class TaskMetrics:
    task: str
    total: int
    abstained: int
    retained_correct: int
    base_correct: int

    @property
    def retained(self):
        return self.total - self.abstained

    @property
    def base_accuracy(self):
        return self.base_correct / self.total

    @property
    def abstention_rate(self):
        return self.abstained / self.total

    @property
    def retained_accuracy(self):
        """Accuracy over non-abstained documents; None when all abstained."""
        return self.retained_correct / self.retained if self.retained else None


def selective_metrics(preds):
    out = {}
    for i, t in enumerate(preds.tasks):
        g, p, b = preds.gold[:, i], preds.pred[:, i], preds.base[:, i]
        out[t] = TaskMetrics(t, len(g), int(np.sum(p == ABSTAIN)),
                             int(np.sum((p != ABSTAIN) & (p == g))), int(np.sum(b == g)))
    return out


def evaluate(model, corpus):
    return selective_metrics(predict_records(model, corpus))


def naive_guess(per_task, subset):
    """(smallest retained accuracy, largest abstention rate) over ``subset``.

    ``per_task`` maps task name to either a ``TaskMetrics`` or an
    ``(accuracy, abstention)`` pair.
    """
    accs, rates = [], []
    for t in subset:
        m = per_task[t]
        if isinstance(m, TaskMetrics):
            accs.append(m.retained_accuracy if m.retained_accuracy is not None else 0.0)
            rates.append(m.abstention_rate)
        else:
            accs.append(m[0])
            rates.append(m[1])
    return min(accs), max(rates)


@dataclass
class ComboMetrics:
    tasks: tuple
    total: int
    abstained: int
    retained_correct: int
    base_correct: int
    member_correct_on_retained: dict
    naive: tuple

    @property
    def label(self):
        return ",".join(TASK_CODES.get(t, t) for t in self.tasks)

    @property
    def retained(self):
        return self.total - self.abstained

    @property
    def abstention_rate(self):
        return self.abstained / self.total

    @property
    def retained_accuracy(self):
        return self.retained_correct / self.retained if self.retained else None

    @property
    def base_accuracy(self):
        return self.base_correct / self.total

    def member_accuracy(self, task):
        return self.member_correct_on_retained[task] / self.retained if self.retained else None


def combo_metrics(preds, tasks):
    """Joint metrics: a document counts as abstained if any task abstains."""
    tasks = tuple(tasks)
    if not tasks:
        raise ValueError("task subset must be non-empty")
    for t in tasks:
        if t not in preds.tasks:
            raise KeyError(f"unknown task {t!r}; have {preds.tasks}")
    cols = [preds.column(t) for t in tasks]
    g, p, b = preds.gold[:, cols], preds.pred[:, cols], preds.base[:, cols]
    joint_abs = np.any(p == ABSTAIN, axis=1)
    kept = ~joint_abs
    correct = p == g
    member = {t: int(np.sum(correct[kept, j])) for j, t in enumerate(tasks)}
    per_task = selective_metrics(preds)
    return ComboMetrics(tasks, len(g), int(joint_abs.sum()),
                        int(np.sum(np.all(correct[kept], axis=1))),
                        int(np.sum(np.all(b == g, axis=1))), member,
                        naive_guess(per_task, tasks))


def evaluate_combo(model, corpus, tasks):
    return combo_metrics(predict_records(model, corpus), tasks)


# -- abstention audit ------------------------------------------------------------

UNDEFINED = "undefined"
INFINITE = "inf"


@dataclass
class AuditRow:
    task: str
    flag: str
    abstained_with: int
    abstained: int
    retained_with: int
    retained: int

    @property
    def enrichment(self):
        """P(flag | abstained) / P(flag | retained) as a float or a marker string."""
        if self.abstained == 0 or self.retained == 0:
            return UNDEFINED
        pa = self.abstained_with / self.abstained
        pr = self.retained_with / self.retained
        if pr == 0.0:
            return INFINITE if pa > 0 else UNDEFINED
        return pa / pr


def abstention_audit(preds, corpus, provenance=None):
    """Enrichment of each noise flag (and confuser presence) among abstentions.

    ``provenance`` maps doc_id to ``{"flags": {...}, "has_confuser": bool}``;
    when omitted the documents' own flags are used.
    """
    if provenance is None:
        provenance = {d.doc_id: {"flags": d.flags, "has_confuser": d.has_confuser} for d in corpus.docs}
    missing = [i for i in preds.doc_ids if i not in provenance]
    if missing:
        raise KeyError(f"no provenance for {len(missing)} documents, e.g. {missing[:3]}")
    rows = []
    for t in preds.tasks:
        abst = preds.abstained(t)
        flag_of = np.array([provenance[i]["flags"].get(t, "clean") for i in preds.doc_ids])
        conf = np.array([bool(provenance[i].get("has_confuser", False)) for i in preds.doc_ids])
        tests = [(f, flag_of == f) for f in FLAGS] + [("has_confuser", conf)]
        for name, mask in tests:
            rows.append(AuditRow(t, name, int(np.sum(mask & abst)), int(abst.sum()),
                                 int(np.sum(mask & ~abst)), int(np.sum(~abst))))
    return rows


# -- report formatting ---------------------------------------------------------------

def _pct(x):
    return "NA" if x is None else f"{100.0 * x:.2f}"


def metrics_tsv(per_task):
    lines = ["task\tbase_acc\tabs_rate\tretained_acc\tn\tn_abstained\tn_retained_correct\tn_base_correct"]
    for m in per_task.values():
        lines.append(f"{m.task}\t{_pct(m.base_accuracy)}\t{_pct(m.abstention_rate)}\t{_pct(m.retained_accuracy)}"
                     f"\t{m.total}\t{m.abstained}\t{m.retained_correct}\t{m.base_correct}")
    return "\n".join(lines) + "\n"


def combos_tsv(combos):
    lines = ["tasks\tbase_acc\tabs_rate\tretained_acc\tnaive_acc\tnaive_abs\tn\tn_abstained\tn_retained_correct"]
    for c in combos:
        lines.append(f"{c.label}\t{_pct(c.base_accuracy)}\t{_pct(c.abstention_rate)}\t{_pct(c.retained_accuracy)}"
                     f"\t{_pct(c.naive[0])}\t{_pct(c.naive[1])}\t{c.total}\t{c.abstained}\t{c.retained_correct}")
    return "\n".join(lines) + "\n"


def audit_tsv(rows):
    lines = ["task\tflag\tabstained_with\tabstained\tretained_with\tretained\tenrichment"]
    for r in rows:
        e = r.enrichment
        e = e if isinstance(e, str) else f"{e:.4f}"
        lines.append(f"{r.task}\t{r.flag}\t{r.abstained_with}\t{r.abstained}\t{r.retained_with}\t{r.retained}\t{e}")
    return "\n".join(lines) + "\n"


def render_table(header, rows):
    """Aligned plain-text table."""
    cells = [header] + rows
    widths = [max(len(str(r[i])) for r in cells) for i in range(len(header))]
    out = []
    for j, r in enumerate(cells):
        out.append("  ".join(str(c).ljust(w) if i == 0 else str(c).rjust(w) for i, (c, w) in enumerate(zip(r, widths))))
        if j == 0:
            out.append("  ".join("-" * w for w in widths))
    return "\n".join(out) + "\n"


def metrics_text(per_task, combos=()):
    header = ["Task", "Base Acc (no abs)", "Abs rate", "Accuracy (retained)"]
    rows = [[m.task.capitalize(), _pct(m.base_accuracy) + "%", _pct(m.abstention_rate) + "%",
             _pct(m.retained_accuracy) + "%"] for m in per_task.values()]
    text = render_table(header, rows)
    if combos:
        rows = [[c.label, _pct(c.base_accuracy) + "%", _pct(c.abstention_rate) + "%",
                 _pct(c.retained_accuracy) + "%", _pct(c.naive[0]) + "%", _pct(c.naive[1]) + "%"] for c in combos]
        text += "\n" + render_table(header + ["Naive acc", "Naive abs"], rows)
    return text
