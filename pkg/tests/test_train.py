import numpy as np
import pytest

import importlib

train_mod = importlib.import_module("dactext.train")
from dactext.corpus import SplitSpec, split
from dactext.loss import AbstentionConfig
from dactext.model import ModelConfig, model_init
from dactext.nn import make_rng
from dactext.train import DivergenceError, TrainConfig, budget_sweep, frontier_violations, history_tsv, train


def _setup(corpus, seed=0):
    parts = split(corpus, SplitSpec(), make_rng(seed))
    mcfg = ModelConfig(vocab_size=len(corpus.vocab), tasks=corpus.tasks, embed_dim=8, filters_per_width=8,
                       filter_widths=(2, 3), dropout=0.2, seed=seed)
    return parts, mcfg


def test_history_and_selection(small_corpus):
    (tr, va, _), mcfg = _setup(small_corpus)
    cfg = TrainConfig(epochs=3, batch_size=16, lr=3e-3,
                      abstention=AbstentionConfig(budget=0.3, alpha_init=1.5, warmup_epochs=1))
    model, hist = train(model_init(mcfg), tr, va, cfg)
    assert [h.epoch for h in hist] == [0, 1, 2]
    assert model.metadata["best_epoch"] in (0, 1, 2)
    best = hist[model.metadata["best_epoch"]]
    if any(h.meets_budget for h in hist):
        assert best.meets_budget
    lines = history_tsv(hist, mcfg.task_names()).splitlines()
    assert len(lines) == 4 and all(len(l.split("\t")) == len(lines[0].split("\t")) for l in lines)
    assert "site_alpha" in lines[0]


def test_same_seed_same_model(small_corpus):
    (tr, va, _), mcfg = _setup(small_corpus)
    cfg = TrainConfig(epochs=1, batch_size=32)
    a, _ = train(model_init(mcfg), tr, va, cfg)
    b, _ = train(model_init(mcfg), tr, va, cfg)
    assert all(np.array_equal(a.params[n].value, b.params[n].value) for n in a.params)


def test_baseline_never_abstains(small_corpus):
    from dactext.metrics import evaluate
    (tr, va, te), mcfg = _setup(small_corpus)
    model, _ = train(model_init(mcfg), tr, va, TrainConfig(epochs=1, abstain=False))
    assert all(m.abstention_rate == 0.0 for m in evaluate(model, te).values())


def test_divergence_keeps_history(small_corpus, monkeypatch):
    (tr, va, _), mcfg = _setup(small_corpus)
    real = train_mod.loss_batch
    calls = {"n": 0}

    def flaky(*a, **k):
        calls["n"] += 1
        loss, g = real(*a, **k)
        return (float("nan"), g) if calls["n"] > 12 else (loss, g)
    monkeypatch.setattr(train_mod, "loss_batch", flaky)
    with pytest.raises(DivergenceError) as e:
        train(model_init(mcfg), tr, va, TrainConfig(epochs=3, batch_size=16))
    assert len(e.value.history) == 1


def test_budget_sweep_rows(small_corpus):
    (tr, va, te), mcfg = _setup(small_corpus)
    rows = budget_sweep(tr, va, te, mcfg, TrainConfig(epochs=1), [0.1, 0.1])
    assert [r["seed"] for r in rows] == [1000, 2000]


def test_frontier_violations():
    rows = [{"budget": 0.1, "retained_accuracy": 0.8}, {"budget": 0.2, "retained_accuracy": 0.7},
            {"budget": 0.3, "retained_accuracy": 0.9}]
    assert frontier_violations(rows) == [(0.1, 0.2)]
    assert frontier_violations(rows, tol=0.2) == []
