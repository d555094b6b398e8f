"""Perturbation-based local explanations for text classifiers.

Every non-PAD position in a document is one feature (a word instance, so two
occurrences of the same token are explained separately). Masks switch word
instances off by replacing them with PAD, which keeps document length and
convolution windows aligned. The probability of the explained class over the
perturbed documents is regressed on the masks with a locality-weighted ridge
fit.
"""
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .model import PAD_ID
from .nn import make_rng

HIGHEST_WEIGHTS = "highest_weights"


@dataclass
class PerturbationConfig:
    num_samples: int = 2000
    top_k: int = 40
    kernel_width: float = None
    ridge: float = 1.0
    method: str = HIGHEST_WEIGHTS
    batch_size: int = 256
    seed: int = 0

    def __post_init__(self):
        if self.num_samples < 1:
            raise ValueError("num_samples must be >= 1")
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")
        if self.method != HIGHEST_WEIGHTS:
            raise ValueError(f"unknown feature selection method {self.method!r}")
        if self.kernel_width is None:
            self.kernel_width = 0.75 * math.sqrt(self.top_k)
        if self.kernel_width <= 0 or self.ridge < 0:
            raise ValueError("kernel_width must be positive and ridge non-negative")

    def digest(self):
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


@dataclass
class Explanation:
    doc_id: str
    task: str
    target_class: int
    class_label: str
    entries: list
    r2: float
    method: str = HIGHEST_WEIGHTS
    degenerate: bool = False
    config_digest: str = ""

    def top_positions(self, n=10):
        return [e[0] for e in self.entries[:n]]

    def to_record(self):
        return {"doc_id": self.doc_id, "task": self.task, "class": self.class_label,
                "class_index": self.target_class,
                "entries": [[int(p), t, float(c)] for p, t, c in self.entries],
                "r2": float(self.r2), "method": self.method, "degenerate": self.degenerate,
                "config_digest": self.config_digest}

    @classmethod
    def from_record(cls, rec):
        return cls(rec["doc_id"], rec["task"], rec.get("class_index", -1), rec["class"],
                   [(int(p), t, float(c)) for p, t, c in rec["entries"]], rec["r2"],
                   rec.get("method", HIGHEST_WEIGHTS), rec.get("degenerate", False),
                   rec.get("config_digest", ""))


def perturb_masks(n_features, num_samples, rng):
    """Bernoulli(0.5) keep-masks; row 0 is always all ones."""
    masks = rng.random((num_samples, n_features)) < 0.5
    masks[0] = True
    return masks


def apply_mask(ids, positions, mask):
    """Replace the word instances switched off in ``mask`` with PAD."""
    out = np.array(ids, dtype=np.int64, copy=True)
    out[np.asarray(positions)[~np.asarray(mask, dtype=bool)]] = PAD_ID
    return out


def cosine_distance_to_ones(masks):
    masks = np.atleast_2d(masks)
    n = masks.shape[1]
    kept = masks.sum(axis=1).astype(np.float64)
    return 1.0 - np.sqrt(kept / n)


def kernel_weight(mask, width):
    """``exp(-d**2 / width**2)`` with ``d`` the cosine distance to the all-ones mask.

    The all-zeros mask is taken at distance 1.
    """
    d = cosine_distance_to_ones(np.atleast_2d(mask))
    w = np.exp(-d ** 2 / width ** 2)
    return w if np.ndim(mask) > 1 else float(w[0])


def weighted_ridge(X, y, w, lam):
    """Ridge on weighted-standardised columns.

    Returns coefficients in the original column units, the intercept and the
    weighted R^2 of the fit. Constant columns get a zero coefficient.
    """
    wn = w / w.sum()
    xm = wn @ X
    ym = float(wn @ y)
    Xc = X - xm
    yc = y - ym
    sd = np.sqrt(wn @ (Xc ** 2))
    live = sd > 0
    beta = np.zeros(X.shape[1])
    if live.any():
        Z = Xc[:, live] / sd[live]
        A = Z.T @ (Z * w[:, None]) + lam * np.eye(Z.shape[1])
        b = Z.T @ (w * yc)
        beta[live] = np.linalg.solve(A, b) / sd[live]
    pred = Xc @ beta
    ss_tot = float(wn @ yc ** 2)
    r2 = 1.0 - float(wn @ (yc - pred) ** 2) / ss_tot if ss_tot > 0 else 0.0
    return beta, ym - float(xm @ beta), r2


def explain_fn(predict, doc, cfg, doc_id="", task="", target_class=0, class_label=None, vocab=None):
    """Explain ``predict`` around ``doc``.

    ``predict(ids, lengths)`` takes an (S, L) batch of token ids and returns
    the probability of the explained class for each row.
    """
    doc = np.asarray(doc, dtype=np.int64)
    positions = np.flatnonzero(doc != PAD_ID)
    if positions.size == 0:
        raise ValueError("document has no non-PAD tokens to explain")
    rng = make_rng(cfg.seed)
    n = positions.size
    masks = perturb_masks(n, cfg.num_samples, rng)
    y = np.empty(cfg.num_samples)
    lengths = np.full(cfg.batch_size, len(doc), dtype=np.int64)
    for s in range(0, cfg.num_samples, cfg.batch_size):
        m = masks[s:s + cfg.batch_size]
        batch = np.repeat(doc[None, :], len(m), axis=0)
        off = ~m
        rows, cols = np.nonzero(off)
        batch[rows, positions[cols]] = PAD_ID
        y[s:s + len(m)] = predict(batch, lengths[:len(m)])
    X = masks.astype(np.float64)
    w = kernel_weight(masks, cfg.kernel_width)
    degenerate = bool(np.ptp(y) == 0.0)
    if degenerate:
        coef, r2, selected = np.zeros(n), 0.0, np.arange(min(n, cfg.top_k))
    else:
        selected = np.arange(n)
        if n > cfg.top_k:
            full, _, _ = weighted_ridge(X, y, w, cfg.ridge)
            # rank by |coef|, ties by position
            selected = np.sort(np.lexsort((np.arange(n), -np.abs(full)))[:cfg.top_k])
        coef_sel, _, r2 = weighted_ridge(X[:, selected], y, w, cfg.ridge)
        coef = np.zeros(n)
        coef[selected] = coef_sel
    order = sorted(selected, key=lambda j: (-abs(coef[j]), positions[j]))
    tok = (lambda i: vocab.token(int(i))) if vocab is not None else (lambda i: str(int(i)))
    entries = [(int(positions[j]), tok(doc[positions[j]]), float(coef[j])) for j in order]
    return Explanation(doc_id, task, int(target_class),
                       class_label if class_label is not None else str(target_class),
                       entries, float(r2), cfg.method, degenerate, cfg.digest())


def explain(model, doc, task, cfg, target_class=None, doc_id="", vocab=None):
    """Explain one task head of ``model``; defaults to its predicted class (abstain included)."""
    names = model.config.task_names()
    ti = names.index(task)
    spec = model.config.tasks[ti]
    if target_class is None:
        target_class = int(np.argmax(model.forward(doc)[ti]))
    label = "ABSTAIN" if target_class == spec.num_classes else str(target_class)

    def predict(ids, lengths):
        return model.predict_proba_ids(ids, lengths)[ti][:, target_class]

    doc = np.asarray(doc, dtype=np.int64)
    if len(doc) < model.config.min_len:
        doc = np.concatenate([doc, np.full(model.config.min_len - len(doc), PAD_ID, dtype=np.int64)])
    return explain_fn(predict, doc, cfg, doc_id, task, target_class, label, vocab)


def jaccard(a, b):
    a, b = set(a), set(b)
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)


def stability(explainer, runs, cfg, top=10):
    """Mean pairwise Jaccard of top-``top`` word-instance sets over seeded runs.

    ``explainer(cfg)`` returns an Explanation; run ``r`` uses seed
    ``cfg.seed + r``.
    """
    if runs < 2:
        raise ValueError("stability needs at least two runs")
    from dataclasses import replace
    sets = [explainer(replace(cfg, seed=cfg.seed + r)).top_positions(top) for r in range(runs)]
    scores = [jaccard(sets[i], sets[j]) for i in range(runs) for j in range(i + 1, runs)]
    return float(np.mean(scores))


def render_explanation(exp, top=10, width=20):
    """Text rendering: one line per word instance with a signed bar."""
    head = f"doc {exp.doc_id}  task {exp.task}  class {exp.class_label}  r2 {exp.r2:.3f}"
    entries = exp.entries[:top]
    scale = max((abs(c) for _, _, c in entries), default=0.0)
    lines = [head]
    tokw = max((len(t) for _, t, _ in entries), default=5)
    for pos, tok, c in entries:
        n = int(round(width * abs(c) / scale)) if scale > 0 else 0
        left = ("-" * n).rjust(width) if c < 0 else " " * width
        right = ("+" * n).ljust(width) if c > 0 else " " * width
        lines.append(f"  {tok:<{tokw}} @{pos:<5d} {left}|{right} {c:+.5f}")
    return "\n".join(lines) + "\n"
