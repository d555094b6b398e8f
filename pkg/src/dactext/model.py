"""Multitask word-CNN with an abstain class on every task head.

embedding -> for each filter width: conv -> ReLU -> max over time ->
concatenate -> one dense+softmax head per task over ``k_t + 1`` classes.
"""
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from .nn import Parameter, check_finite, glorot_uniform, make_rng, softmax

TASK_NAMES = ("site", "subsite", "laterality", "behavior", "histology", "grade")
PAD_ID = 0
UNK_ID = 1
ABSTAIN = -1


class ConfigError(ValueError):
    """Invalid model configuration; the message names the offending field."""


@dataclass(frozen=True)
class TaskSpec:
    name: str
    num_classes: int

    @property
    def width(self):
        return self.num_classes + 1


@dataclass
class ModelConfig:
    vocab_size: int
    tasks: list
    embed_dim: int = 300
    filter_widths: tuple = (3, 4, 5)
    filters_per_width: int = 300
    max_len: int = 1500
    dropout: float = 0.0
    seed: int = 0

    def __post_init__(self):
        self.tasks = [t if isinstance(t, TaskSpec) else TaskSpec(**t) for t in self.tasks]
        self.filter_widths = tuple(int(w) for w in self.filter_widths)
        self.validate()

    def validate(self):
        if self.vocab_size < 2:
            raise ConfigError("vocab_size: must be >= 2 (PAD and UNK are reserved)")
        if self.embed_dim <= 0:
            raise ConfigError("embed_dim: must be positive")
        if self.filters_per_width <= 0:
            raise ConfigError("filters_per_width: must be positive")
        ws = self.filter_widths
        if not ws or ws[0] < 1 or any(b <= a for a, b in zip(ws, ws[1:])):
            raise ConfigError("filter_widths: must be positive and strictly increasing")
        if not self.tasks:
            raise ConfigError("tasks: at least one task is required")
        names = [t.name for t in self.tasks]
        if len(set(names)) != len(names):
            raise ConfigError("tasks: duplicate task name")
        for t in self.tasks:
            if t.name not in TASK_NAMES:
                raise ConfigError(f"tasks: unknown task name {t.name!r}")
            if t.num_classes < 2:
                raise ConfigError(f"tasks: {t.name} needs num_classes >= 2")
        if self.max_len < ws[-1]:
            raise ConfigError("max_len: must be at least the largest filter width")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout: must be in [0, 1)")

    @property
    def feature_dim(self):
        return self.filters_per_width * len(self.filter_widths)

    @property
    def min_len(self):
        return self.filter_widths[-1]

    def task_names(self):
        return [t.name for t in self.tasks]

    def to_dict(self):
        d = asdict(self)
        d["filter_widths"] = list(self.filter_widths)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def param_shapes(self):
        shapes = {"embedding": (self.vocab_size, self.embed_dim)}
        F, D = self.filters_per_width, self.embed_dim
        for w in self.filter_widths:
            shapes[f"conv{w}.kernel"] = (F, w, D)
            shapes[f"conv{w}.bias"] = (F,)
        for t in self.tasks:
            shapes[f"head.{t.name}.weight"] = (t.width, self.feature_dim)
            shapes[f"head.{t.name}.bias"] = (t.width,)
        return shapes

    def param_count(self):
        return int(sum(np.prod(s) for s in self.param_shapes().values()))


def pad_batch(docs, min_len, max_len=None):
    """Right-pad token sequences into an (N, L) id array plus true lengths.

    Sequences shorter than ``min_len`` are padded with PAD up to it, longer
    than ``max_len`` are truncated.
    """
    seqs = [np.asarray(d, dtype=np.int64)[:max_len] for d in docs]
    lengths = np.array([max(len(s), min_len) for s in seqs], dtype=np.int64)
    L = int(lengths.max()) if len(seqs) else min_len
    ids = np.full((len(seqs), L), PAD_ID, dtype=np.int64)
    for i, s in enumerate(seqs):
        ids[i, :len(s)] = s
    return ids, lengths


@dataclass
class ForwardCache:
    ids: np.ndarray
    lengths: np.ndarray
    emb: np.ndarray
    pooled: list
    argmax: list
    features: np.ndarray
    drop_mask: np.ndarray = None


class MTCNN:
    """The model: a named parameter dict plus forward/backward passes."""

    def __init__(self, config, params):
        self.config = config
        self.params = params
        self.metadata = {}

    @property
    def tasks(self):
        return self.config.tasks

    def parameters(self):
        return list(self.params.values())

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def param_count(self):
        return int(sum(p.value.size for p in self.params.values()))

    # -- forward / backward --------------------------------------------------

    def forward_batch(self, ids, lengths, train=False, rng=None):
        """Logits for each task for a padded batch; returns (logits list, cache)."""
        cfg = self.config
        ids = np.asarray(ids, dtype=np.int64)
        lengths = np.asarray(lengths, dtype=np.int64)
        V = cfg.vocab_size
        if ids.size and (ids.min() < 0 or ids.max() >= V):
            bad = np.argwhere((ids < 0) | (ids >= V))[0]
            raise IndexError(f"token id {int(ids[tuple(bad)])} at position {tuple(int(i) for i in bad)} outside [0, {V})")
        if lengths.size and lengths.min() < cfg.min_len:
            raise ValueError(f"documents must be padded to at least {cfg.min_len} tokens")
        emb = self.params["embedding"].value[ids]
        pooled, argmax = [], []
        for w in cfg.filter_widths:
            pw, aw = kernels.conv_relu_maxpool(
                emb, lengths, self.params[f"conv{w}.kernel"].value, self.params[f"conv{w}.bias"].value)
            pooled.append(pw)
            argmax.append(aw)
        feats = np.concatenate(pooled, axis=1)
        drop_mask = None
        if train and cfg.dropout > 0.0:
            keep = 1.0 - cfg.dropout
            drop_mask = (rng.random(feats.shape) < keep) / keep
            feats = feats * drop_mask
        logits = [feats @ self.params[f"head.{t.name}.weight"].value.T + self.params[f"head.{t.name}.bias"].value
                  for t in cfg.tasks]
        return logits, ForwardCache(ids, lengths, emb, pooled, argmax, feats, drop_mask)

    def backward(self, cache, glogits):
        """Accumulate parameter gradients given d(loss)/d(logits) per task."""
        cfg = self.config
        gfeat = np.zeros_like(cache.features)
        for t, g in zip(cfg.tasks, glogits):
            W = self.params[f"head.{t.name}.weight"]
            W.grad += g.T @ cache.features
            self.params[f"head.{t.name}.bias"].grad += g.sum(axis=0)
            gfeat += g @ W.value
        if cache.drop_mask is not None:
            gfeat *= cache.drop_mask
        F = cfg.filters_per_width
        gemb = np.zeros_like(cache.emb)
        for i, w in enumerate(cfg.filter_widths):
            K = self.params[f"conv{w}.kernel"]
            dx, dk, db = kernels.conv_maxpool_backward(
                cache.emb, cache.argmax[i], cache.pooled[i], np.ascontiguousarray(gfeat[:, i * F:(i + 1) * F]), K.value)
            gemb += dx
            K.grad += dk
            self.params[f"conv{w}.bias"].grad += db
        kernels.scatter_add_rows(self.params["embedding"].grad, cache.ids, gemb)

    def prepare(self, docs):
        return pad_batch(docs, self.config.min_len, self.config.max_len)

    def predict_proba(self, docs, batch_size=256):
        """Softmax outputs per task for a list of token sequences: list of (N, k_t+1)."""
        out = [[] for _ in self.config.tasks]
        for s in range(0, len(docs), batch_size):
            ids, lengths = self.prepare(docs[s:s + batch_size])
            logits, _ = self.forward_batch(ids, lengths)
            for i, z in enumerate(logits):
                out[i].append(softmax(check_finite(z, "logits")))
        return [np.concatenate(o, axis=0) if o else np.zeros((0, t.width))
                for o, t in zip(out, self.config.tasks)]

    def predict_proba_ids(self, ids, lengths):
        """Softmax outputs per task for an already padded batch."""
        logits, _ = self.forward_batch(ids, lengths)
        return [softmax(z) for z in logits]

    def forward(self, doc):
        """One probability vector per task for a single document."""
        return [p[0] for p in self.predict_proba([doc])]

    def predict(self, doc):
        """Map task name to predicted class index, or ``ABSTAIN``."""
        return {t.name: decode_prediction(p, t.num_classes)
                for t, p in zip(self.config.tasks, self.forward(doc))}


def decode_prediction(probs, num_classes):
    """Argmax over k+1 probabilities with lowest-index ties; abstain maps to ``ABSTAIN``."""
    c = int(np.argmax(probs))
    return ABSTAIN if c == num_classes else c


def model_init(config, rng=None, embeddings=None):
    """Allocate and initialise parameters.

    Embeddings are uniform(-0.05, 0.05), conv and dense weights
    Glorot-uniform, biases zero. ``embeddings`` optionally supplies a
    (vocab_size, embed_dim) table to start from instead.
    """
    config.validate()
    if rng is None:
        rng = make_rng(config.seed)
    shapes = config.param_shapes()
    V, D = shapes["embedding"]
    F = config.filters_per_width
    params = {}
    if embeddings is not None:
        embeddings = np.asarray(embeddings, dtype=np.float64)
        if embeddings.shape != (V, D):
            raise ConfigError(f"embeddings: shape {embeddings.shape} != {(V, D)}")
        table = embeddings.copy()
    else:
        table = rng.uniform(-0.05, 0.05, size=(V, D))
    params["embedding"] = Parameter("embedding", table)
    for w in config.filter_widths:
        params[f"conv{w}.kernel"] = Parameter(
            f"conv{w}.kernel", glorot_uniform(rng, (F, w, D), fan_in=w * D, fan_out=w * F))
        params[f"conv{w}.bias"] = Parameter(f"conv{w}.bias", np.zeros(F))
    for t in config.tasks:
        params[f"head.{t.name}.weight"] = Parameter(
            f"head.{t.name}.weight",
            glorot_uniform(rng, (t.width, config.feature_dim), config.feature_dim, t.width))
        params[f"head.{t.name}.bias"] = Parameter(f"head.{t.name}.bias", np.zeros(t.width))
    return MTCNN(config, params)
