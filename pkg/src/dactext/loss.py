"""Abstention loss, its gradient through softmax, and the alpha controller.

For a head with ``k`` true classes plus an abstain class at index ``k``,
with ``q = 1 - p_abstain`` the loss of target ``t`` is::

    L = -q * log(p_t / q) + alpha * log(1 / q)

``p_t / q`` is the probability of ``t`` renormalised over the true classes,
so ``L`` is ``q`` times the renormalised cross-entropy plus a penalty that
grows as the model moves mass onto abstention.
"""
from dataclasses import dataclass

import numpy as np

PROB_FLOOR = 1e-12
LOG_FLOOR = np.log(PROB_FLOOR)


@dataclass
class SaturationCounter:
    """Counts loss evaluations where a log argument hit the probability floor."""

    count: int = 0

    def add(self, n):
        self.count += int(n)


def abstain_loss(p, target, alpha, counter=None):
    """Loss of one probability vector ``p`` (length k+1, abstain last).

    ``p_target`` and ``1 - p_abstain`` are floored at 1e-12 instead of
    raising; each floored evaluation is added to ``counter``.
    """
    p = np.asarray(p, dtype=np.float64)
    k = p.shape[0] - 1
    if not 0 <= target < k:
        raise ValueError(f"target {target} outside true classes [0, {k})")
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    q = 1.0 - p[k]
    pt = p[target]
    if q < PROB_FLOOR or pt < PROB_FLOOR:
        if counter is not None:
            counter.add(1)
        q = max(q, PROB_FLOOR)
        pt = max(pt, PROB_FLOOR)
    return float(-q * np.log(min(pt / q, 1.0)) - alpha * np.log(q))


def _logsumexp(z):
    m = z.max(axis=-1, keepdims=True)
    return (m + np.log(np.exp(z - m).sum(axis=-1, keepdims=True)))[..., 0]


def abstain_loss_and_grad(logits, targets, alpha, counter=None):
    """Per-row loss and gradient with respect to the logits.

    Parameters
    ----------
    logits : ndarray, shape (N, k+1)
    targets : ndarray of int, shape (N,)
    alpha : float

    Returns
    -------
    losses : ndarray, shape (N,)
    grad : ndarray, shape (N, k+1)
    """
    z = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    t = np.atleast_1d(np.asarray(targets, dtype=np.int64))
    N, C = z.shape
    k = C - 1
    if np.any((t < 0) | (t >= k)):
        raise ValueError("targets must index true classes, never the abstain class")
    lse = _logsumexp(z)
    lse_true = _logsumexp(z[:, :k])
    rows = np.arange(N)
    lt = z[rows, t] - lse_true          # log of renormalised target probability
    lq = lse_true - lse                 # log(1 - p_abstain)
    p = np.exp(z - lse[:, None])
    r = np.zeros_like(z)
    r[:, :k] = np.exp(z[:, :k] - lse_true[:, None])

    dlt = -r
    dlt[rows, t] += 1.0
    dlq = r - p

    sat_t = lt < LOG_FLOOR
    sat_q = lq < LOG_FLOOR
    if counter is not None:
        counter.add(np.count_nonzero(sat_t | sat_q))
    lt = np.where(sat_t, LOG_FLOOR, lt)
    lq = np.where(sat_q, LOG_FLOOR, lq)
    dlt[sat_t] = 0.0
    dlq[sat_q] = 0.0
    q = np.exp(lq)

    losses = -q * lt - alpha * lq
    grad = -(q * lt + alpha)[:, None] * dlq - q[:, None] * dlt
    return losses, grad


def abstain_loss_grad(logits, target, alpha):
    """Gradient of the loss of ``softmax(logits)`` for a single row."""
    _, g = abstain_loss_and_grad(np.asarray(logits)[None, :], [target], alpha)
    return g[0]


def loss_batch(logits, targets, alphas, task_mask=None, counter=None):
    """Unweighted sum over tasks of the minibatch-mean abstention loss.

    ``logits`` is one (N, k_t+1) array per task, ``targets`` is (N, n_tasks),
    ``alphas`` has one value per task. Tasks with ``task_mask`` False add
    nothing and get a zero gradient.

    Returns the scalar loss and one gradient array per task (already divided
    by N).
    """
    targets = np.asarray(targets, dtype=np.int64)
    total = 0.0
    grads = []
    for i, z in enumerate(logits):
        if task_mask is not None and not task_mask[i]:
            grads.append(np.zeros_like(z))
            continue
        n = z.shape[0]
        losses, g = abstain_loss_and_grad(z, targets[:, i], alphas[i], counter)
        total += float(losses.mean())
        grads.append(g / n)
    return total, grads


@dataclass
class AbstentionConfig:
    """Per-task abstention penalty and the feedback law driving it.

    ``alpha`` is the current value. After ``warmup_epochs`` it is multiplied
    by ``up_factor`` when validation abstention exceeds ``budget`` and
    divided by ``down_factor`` when abstention falls below
    ``budget * (1 - slack)``.
    """

    budget: float = 0.5
    alpha_init: float = 2.0
    alpha: float = None
    warmup_epochs: int = 5
    up_factor: float = 1.2
    down_factor: float = 1.2
    slack: float = 0.1
    alpha_min: float = 1e-3
    alpha_max: float = 1e3

    def __post_init__(self):
        if self.alpha is None:
            self.alpha = self.alpha_init
        if not 0.0 <= self.budget <= 1.0:
            raise ValueError(f"budget {self.budget} outside [0, 1]")
        if not 0.0 < self.alpha_min <= self.alpha_max:
            raise ValueError("need 0 < alpha_min <= alpha_max")
        if self.up_factor <= 0 or self.down_factor <= 0:
            raise ValueError("adjustment factors must be positive")
        if self.warmup_epochs < 0:
            raise ValueError("warmup_epochs must be >= 0")
        self.alpha = min(max(self.alpha, self.alpha_min), self.alpha_max)


def alpha_controller_step(cfg, epoch, observed_abstention):
    """Next alpha given the abstention rate observed on validation after ``epoch``."""
    if epoch < cfg.warmup_epochs:
        alpha = cfg.alpha_init
    elif observed_abstention > cfg.budget:
        alpha = cfg.alpha * cfg.up_factor
    elif observed_abstention < cfg.budget * (1.0 - cfg.slack):
        alpha = cfg.alpha / cfg.down_factor
    else:
        alpha = cfg.alpha
    return min(max(alpha, cfg.alpha_min), cfg.alpha_max)
