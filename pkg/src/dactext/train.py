"""Training with per-task alpha control, model selection and budget sweeps."""
import copy
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .loss import AbstentionConfig, SaturationCounter, alpha_controller_step, loss_batch
from .metrics import evaluate
from .model import model_init, pad_batch
from .nn import Adam, make_rng

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    """Non-finite training loss. ``history`` holds the epochs completed so far."""

    def __init__(self, msg, history):
        super().__init__(msg)
        self.history = history


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 32
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    abstention: AbstentionConfig = field(default_factory=AbstentionConfig)
    task_abstention: dict = field(default_factory=dict)
    patience: int = 0
    abstain: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if self.patience < 0:
            raise ValueError("patience must be >= 0")

    def abstention_for(self, task):
        return copy.deepcopy(self.task_abstention.get(task, self.abstention))


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    alpha: dict
    abstention: dict
    retained_accuracy: dict
    base_accuracy: dict
    saturated: int
    meets_budget: bool


def _score(rec, tasks):
    accs = [rec.retained_accuracy[t] if rec.retained_accuracy[t] is not None else 0.0 for t in tasks]
    return float(np.mean(accs))


def _excess(rec, ctrl):
    return max(rec.abstention[t] - ctrl[t].budget for t in ctrl)


def train(model, train_set, val_set, cfg):
    """Minibatch Adam on the abstention loss; returns (model, history).

    After each epoch the validation abstention rate of each task drives its
    alpha. The returned model holds the parameters of the best epoch: the
    highest mean validation retained accuracy among epochs whose abstention
    is within budget on every task (earliest on ties). If no epoch meets the
    budget, the epoch with the smallest budget excess is kept.
    """
    tasks = model.config.task_names()
    history = []
    if cfg.epochs == 0:
        return model, history
    if len(train_set) == 0 or len(val_set) == 0:
        raise ValueError("train and validation splits must be non-empty")
    rng = make_rng(cfg.seed)
    ctrl = {t: cfg.abstention_for(t) for t in tasks}
    for c in ctrl.values():
        c.alpha = c.alpha_init
    opt = Adam(model.parameters(), cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    docs = train_set.token_lists()
    labels = train_set.label_matrix()
    best, best_params, best_key = None, None, None
    stale = 0
    model.metadata["abstain"] = cfg.abstain
    for epoch in range(cfg.epochs):
        alphas = [ctrl[t].alpha if cfg.abstain else 0.0 for t in tasks]
        counter = SaturationCounter()
        order = rng.permutation(len(docs))
        total, nb = 0.0, 0
        for s in range(0, len(order), cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            ids, lengths = pad_batch([docs[i] for i in idx], model.config.min_len, model.config.max_len)
            logits, cache = model.forward_batch(ids, lengths, train=True, rng=rng)
            if not cfg.abstain:
                logits = [np.concatenate([z[:, :-1], np.full((z.shape[0], 1), -np.inf)], axis=1) for z in logits]
            loss, grads = loss_batch(logits, labels[idx], alphas, counter=counter)
            if not np.isfinite(loss):
                raise DivergenceError(f"non-finite loss at epoch {epoch}, batch {nb}", history)
            model.zero_grad()
            model.backward(cache, grads)
            opt.step()
            total += loss
            nb += 1
        metrics = evaluate(model, val_set)
        rec = EpochRecord(
            epoch, total / max(nb, 1), dict(zip(tasks, alphas)),
            {t: metrics[t].abstention_rate for t in tasks},
            {t: metrics[t].retained_accuracy for t in tasks},
            {t: metrics[t].base_accuracy for t in tasks},
            counter.count, False)
        rec.meets_budget = all(rec.abstention[t] <= ctrl[t].budget for t in tasks) or not cfg.abstain
        history.append(rec)
        log.info("epoch %d loss %.4f abstention %s alpha %s", epoch, rec.train_loss, rec.abstention, rec.alpha)
        key = (1, _score(rec, tasks)) if rec.meets_budget else (0, -_excess(rec, ctrl))
        if best_key is None or key > best_key:
            best, best_key = rec, key
            best_params = {n: p.value.copy() for n, p in model.params.items()}
            stale = 0
        else:
            stale += 1
        for t in tasks:
            ctrl[t].alpha = alpha_controller_step(ctrl[t], epoch, rec.abstention[t])
        if cfg.patience and stale >= cfg.patience and epoch >= max(c.warmup_epochs for c in ctrl.values()):
            break
    for n, p in model.params.items():
        p.value[...] = best_params[n]
    model.metadata.update({
        "best_epoch": best.epoch,
        "alpha": {t: float(best.alpha[t]) for t in tasks},
        "val_abstention": {t: float(best.abstention[t]) for t in tasks},
        "val_retained_accuracy": {t: (None if best.retained_accuracy[t] is None else float(best.retained_accuracy[t]))
                                  for t in tasks},
    })
    return model, history


def history_tsv(history, tasks):
    cols = ["epoch", "train_loss", "saturated", "meets_budget"]
    for t in tasks:
        cols += [f"{t}_alpha", f"{t}_abstention", f"{t}_retained_acc", f"{t}_base_acc"]
    lines = ["\t".join(cols)]
    for r in history:
        row = [str(r.epoch), f"{r.train_loss:.6f}", str(r.saturated), str(int(r.meets_budget))]
        for t in tasks:
            ra = r.retained_accuracy[t]
            row += [f"{r.alpha[t]:.6f}", f"{r.abstention[t]:.6f}", "NA" if ra is None else f"{ra:.6f}",
                    f"{r.base_accuracy[t]:.6f}"]
        lines.append("\t".join(row))
    return "\n".join(lines) + "\n"


def budget_sweep(train_set, val_set, eval_set, model_cfg, cfg, budgets, warm_start=None):
    """One independent training per budget; returns frontier rows.

    Each run uses seed offset ``1000 * (i + 1)`` for both initialisation and
    training order, so duplicate budgets give independent rows. With
    ``warm_start`` set to a model, every run starts from its parameters.
    """
    if not budgets:
        raise ValueError("need at least one budget")
    rows = []
    for i, b in enumerate(budgets):
        seed = cfg.seed + 1000 * (i + 1)
        run_cfg = replace(cfg, seed=seed, abstention=replace(cfg.abstention, budget=b, alpha=None),
                          task_abstention={t: replace(a, budget=b, alpha=None) for t, a in cfg.task_abstention.items()})
        mcfg = replace(model_cfg, seed=seed)
        model = model_init(mcfg, make_rng(seed))
        if warm_start is not None:
            for n, p in model.params.items():
                p.value[...] = warm_start.params[n].value
        model, hist = train(model, train_set, val_set, run_cfg)
        m = evaluate(model, eval_set)
        abst = float(np.mean([x.abstention_rate for x in m.values()]))
        accs = [x.retained_accuracy for x in m.values() if x.retained_accuracy is not None]
        rows.append({"budget": b, "seed": seed, "abstention": abst,
                     "retained_accuracy": float(np.mean(accs)) if accs else None,
                     "base_accuracy": float(np.mean([x.base_accuracy for x in m.values()])),
                     "alpha": model.metadata["alpha"]})
    return rows


def frontier_violations(rows, tol=0.0):
    """Pairs where retained accuracy drops as the budget grows by more than ``tol``."""
    ordered = sorted((r for r in rows if r["retained_accuracy"] is not None), key=lambda r: r["budget"])
    return [(a["budget"], b["budget"]) for a, b in zip(ordered, ordered[1:])
            if b["budget"] > a["budget"] and b["retained_accuracy"] < a["retained_accuracy"] - tol]
