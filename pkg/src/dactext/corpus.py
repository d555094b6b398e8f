"""Synthetic pathology-like corpora, tokenisation, splitting and JSONL I/O.

Synthetic documents mix class-signal tokens for their labels with shared
background tokens. Two kinds of label noise are injected and recorded per
task in each document's provenance flags:

``flipped_uncorrelated``
    the label was replaced by a different class chosen uniformly, independent
    of the text;
``confuser_injected``
    a run of confuser tokens (``metastatic``, ``metastasis``, ...) was
    inserted and, as a consequence, the designated task's label was replaced
    by a different class.

A document can carry confuser tokens without its label being corrupted; that
is tracked by ``has_confuser``.
"""
import json
import re
from dataclasses import dataclass, field

import numpy as np

from .model import PAD_ID, UNK_ID, TaskSpec

CLEAN = "clean"
FLIPPED = "flipped_uncorrelated"
CONFUSER = "confuser_injected"
FLAGS = (CLEAN, FLIPPED, CONFUSER)

CONFUSER_WORDS = ("metastatic", "metastasis", "metastases", "metastasized", "metastasizing")

_TOKEN_RE = re.compile(r"[a-z0-9]+")


class CorpusError(ValueError):
    pass


class Vocabulary:
    PAD = "<pad>"
    UNK = "<unk>"

    def __init__(self, tokens=()):
        self._tokens = [self.PAD, self.UNK]
        self._index = {self.PAD: PAD_ID, self.UNK: UNK_ID}
        for t in tokens:
            self.add(t)

    def add(self, token):
        if token not in self._index:
            self._index[token] = len(self._tokens)
            self._tokens.append(token)
        return self._index[token]

    def id(self, token):
        return self._index.get(token, UNK_ID)

    def token(self, i):
        return self._tokens[i]

    def __contains__(self, token):
        return token in self._index

    def __len__(self):
        return len(self._tokens)

    @property
    def tokens(self):
        return list(self._tokens)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for t in self._tokens:
                fh.write(t + "\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            toks = [line.rstrip("\n") for line in fh]
        if toks[:2] != [cls.PAD, cls.UNK]:
            raise CorpusError(f"{path}: vocabulary must start with {cls.PAD} and {cls.UNK}")
        return cls(toks[2:])


def split_words(text):
    return _TOKEN_RE.findall(text.lower())


def tokenize(text, vocab, min_len=0, build=False):
    """Lowercase, split on non-alphanumeric runs, map to ids, pad to ``min_len``."""
    words = split_words(text)
    ids = [vocab.add(w) if build else vocab.id(w) for w in words]
    if len(ids) < min_len:
        ids.extend([PAD_ID] * (min_len - len(ids)))
    return np.asarray(ids, dtype=np.int64)


@dataclass
class LabeledDocument:
    doc_id: str
    text: str
    ids: np.ndarray
    labels: dict
    flags: dict = field(default_factory=dict)
    has_confuser: bool = False
    case_id: str = None

    @property
    def group(self):
        return self.case_id if self.case_id is not None else self.doc_id


@dataclass
class Corpus:
    docs: list
    vocab: Vocabulary
    tasks: list
    label_values: dict = None

    def __len__(self):
        return len(self.docs)

    def __iter__(self):
        return iter(self.docs)

    @property
    def task_names(self):
        return [t.name for t in self.tasks]

    def subset(self, docs):
        return Corpus(list(docs), self.vocab, self.tasks, self.label_values)

    def token_lists(self):
        return [d.ids for d in self.docs]

    def label_matrix(self):
        names = self.task_names
        return np.array([[d.labels[n] for n in names] for d in self.docs], dtype=np.int64).reshape(len(self.docs), len(names))

    def by_id(self):
        return {d.doc_id: d for d in self.docs}


# -- synthetic generation -------------------------------------------------------

@dataclass
class SyntheticSpec:
    """Parameters of the synthetic generator.

    ``flip_rate`` and ``signal_rate_*`` may be a float shared by all tasks or
    a dict keyed by task name (flip_rate only).
    """

    tasks: list = field(default_factory=lambda: [TaskSpec("site", 4)])
    n_docs: int = 10000
    vocab_size: int = 2000
    doc_len_min: int = 30
    doc_len_max: int = 80
    signal_tokens_per_class: int = 8
    signal_rate_min: float = 0.0
    signal_rate_max: float = 0.25
    flip_rate: object = 0.0
    confuser_rate: float = 0.0
    confuser_corrupt_prob: float = 0.8
    confuser_task: str = None
    confuser_tokens: int = 3
    confuser_len: int = 3
    docs_per_case: int = 1
    case_support_prob: float = 1.0
    seed: int = 0

    def __post_init__(self):
        self.tasks = [t if isinstance(t, TaskSpec) else TaskSpec(**t) for t in self.tasks]
        if self.confuser_task is None and self.tasks:
            self.confuser_task = self.tasks[0].name
        self.validate()

    def flip_for(self, task):
        if isinstance(self.flip_rate, dict):
            return float(self.flip_rate.get(task, 0.0))
        return float(self.flip_rate)

    def validate(self):
        if not self.tasks:
            raise CorpusError("tasks: at least one task required")
        for t in self.tasks:
            if t.num_classes < 2:
                raise CorpusError(f"tasks: {t.name} needs at least 2 classes")
            if not 0.0 <= self.flip_for(t.name) <= 1.0:
                raise CorpusError(f"flip_rate: {t.name} rate outside [0, 1]")
        for name in ("signal_rate_min", "signal_rate_max", "confuser_rate",
                     "confuser_corrupt_prob", "case_support_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise CorpusError(f"{name}: {v} outside [0, 1]")
        if self.signal_rate_min > self.signal_rate_max:
            raise CorpusError("signal_rate_min: exceeds signal_rate_max")
        if not 1 <= self.doc_len_min <= self.doc_len_max:
            raise CorpusError("doc_len_min: need 1 <= doc_len_min <= doc_len_max")
        if self.n_docs < 0 or self.docs_per_case < 1:
            raise CorpusError("n_docs/docs_per_case: must be non-negative/positive")
        if self.confuser_task not in [t.name for t in self.tasks]:
            raise CorpusError(f"confuser_task: unknown task {self.confuser_task!r}")
        reserved = 2 + sum(t.num_classes for t in self.tasks) * self.signal_tokens_per_class + self.confuser_tokens
        if self.vocab_size <= reserved:
            raise CorpusError(f"vocab_size: {self.vocab_size} leaves no background tokens (need > {reserved})")


def _confuser_words(n):
    words = list(CONFUSER_WORDS[:n])
    words += [f"metast{j}" for j in range(n - len(words))]
    return words


def build_synthetic_vocab(spec):
    vocab = Vocabulary()
    signal = {}
    for t in spec.tasks:
        signal[t.name] = [[vocab.add(f"{t.name}{c}w{j}") for j in range(spec.signal_tokens_per_class)]
                          for c in range(t.num_classes)]
    confusers = [vocab.add(w) for w in _confuser_words(spec.confuser_tokens)]
    j = 0
    while len(vocab) < spec.vocab_size:
        vocab.add(f"bg{j}")
        j += 1
    background = np.arange(len(vocab) - j, len(vocab))
    return vocab, signal, np.asarray(confusers, dtype=np.int64), background


def _other_class(rng, k, c):
    o = int(rng.integers(k - 1))
    return o + 1 if o >= c else o


def generate_corpus(spec, rng):
    """Generate a corpus and its vocabulary; noise events land in the flags."""
    vocab, signal, confusers, background = build_synthetic_vocab(spec)
    tasks = spec.tasks
    docs = []
    n_cases = -(-spec.n_docs // spec.docs_per_case)
    for ci in range(n_cases):
        gold = {t.name: int(rng.integers(t.num_classes)) for t in tasks}
        for di in range(spec.docs_per_case):
            if len(docs) >= spec.n_docs:
                break
            text_labels = dict(gold)
            if di > 0 and rng.random() >= spec.case_support_prob:
                text_labels = {t.name: int(rng.integers(t.num_classes)) for t in tasks}
            L = int(rng.integers(spec.doc_len_min, spec.doc_len_max + 1))
            rate = rng.uniform(spec.signal_rate_min, spec.signal_rate_max)
            is_signal = rng.random(L) < rate
            task_pick = rng.integers(len(tasks), size=L)
            tok_pick = rng.integers(spec.signal_tokens_per_class, size=L)
            bg_pick = background[rng.integers(len(background), size=L)]
            ids = bg_pick.copy()
            for pos in np.flatnonzero(is_signal):
                t = tasks[task_pick[pos]]
                ids[pos] = signal[t.name][text_labels[t.name]][tok_pick[pos]]
            labels = dict(gold)
            flags = {t.name: CLEAN for t in tasks}
            has_conf = bool(rng.random() < spec.confuser_rate)
            if has_conf:
                where = np.sort(rng.integers(L + 1, size=spec.confuser_len))
                run = confusers[rng.integers(len(confusers), size=spec.confuser_len)]
                ids = np.insert(ids, where, run)
                if rng.random() < spec.confuser_corrupt_prob:
                    k = next(t.num_classes for t in tasks if t.name == spec.confuser_task)
                    labels[spec.confuser_task] = _other_class(rng, k, labels[spec.confuser_task])
                    flags[spec.confuser_task] = CONFUSER
            for t in tasks:
                if flags[t.name] == CLEAN and rng.random() < spec.flip_for(t.name):
                    labels[t.name] = _other_class(rng, t.num_classes, labels[t.name])
                    flags[t.name] = FLIPPED
            doc_id = f"d{len(docs):06d}"
            text = " ".join(vocab.token(int(i)) for i in ids)
            case_id = f"c{ci:06d}" if spec.docs_per_case > 1 else None
            docs.append(LabeledDocument(doc_id, text, ids.astype(np.int64), labels, flags, has_conf, case_id))
    label_values = {t.name: list(range(t.num_classes)) for t in tasks}
    return Corpus(docs, vocab, list(tasks), label_values)


# -- splitting --------------------------------------------------------------------

@dataclass
class SplitSpec:
    fractions: tuple = (0.6, 0.2, 0.2)
    by_case: bool = True

    def __post_init__(self):
        f = tuple(float(x) for x in self.fractions)
        if len(f) != 3 or any(x <= 0 for x in f) or abs(sum(f) - 1.0) > 1e-9:
            raise CorpusError("fractions: need three positive values summing to 1")
        self.fractions = f


def _largest_remainder(total, fractions):
    raw = [total * f for f in fractions]
    counts = [int(np.floor(r)) for r in raw]
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[: total - sum(counts)]:
        counts[i] += 1
    return counts


def split(corpus, spec, rng):
    """Shuffle and partition into (train, val, test) corpora.

    In by-case mode every document sharing a ``case_id`` lands in the same
    part; document counts then track the fractions as closely as the group
    sizes allow.
    """
    if len(corpus) == 0:
        raise CorpusError("cannot split an empty corpus")
    groups = {}
    for d in corpus.docs:
        key = d.group if spec.by_case else d.doc_id
        groups.setdefault(key, []).append(d)
    keys = list(groups)
    if len(keys) < 3:
        raise CorpusError(f"{len(keys)} groups cannot fill 3 splits")
    keys = [keys[i] for i in rng.permutation(len(keys))]
    if not spec.by_case or all(len(groups[k]) == 1 for k in keys):
        counts = _largest_remainder(len(keys), spec.fractions)
        bounds = np.cumsum([0] + counts)
        parts = [[d for k in keys[bounds[i]:bounds[i + 1]] for d in groups[k]] for i in range(3)]
    else:
        targets = np.cumsum(_largest_remainder(len(corpus), spec.fractions))
        parts = [[], [], []]
        seen = 0
        for gi, k in enumerate(keys):
            remaining_groups = len(keys) - gi
            part = int(np.searchsorted(targets, seen, side="right"))
            part = min(part, 2)
            # make sure later parts still receive at least one group
            empty_after = sum(1 for p in parts[part + 1:] if not p)
            if remaining_groups <= empty_after and part < 2:
                part = next(i for i in range(part + 1, 3) if not parts[i])
            parts[part].extend(groups[k])
            seen += len(groups[k])
        if any(not p for p in parts):
            raise CorpusError("group sizes leave a split empty")
    return tuple(corpus.subset(p) for p in parts)


# -- JSONL --------------------------------------------------------------------------

def write_jsonl(corpus, path):
    with open(path, "w", encoding="utf-8") as fh:
        for d in corpus.docs:
            rec = {"doc_id": d.doc_id, "text": d.text, "labels": {n: d.labels[n] for n in corpus.task_names}}
            if d.case_id is not None:
                rec["case_id"] = d.case_id
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def write_provenance(corpus, path):
    with open(path, "w", encoding="utf-8") as fh:
        for d in corpus.docs:
            rec = {"doc_id": d.doc_id, "flags": {n: d.flags.get(n, CLEAN) for n in corpus.task_names},
                   "has_confuser": bool(d.has_confuser)}
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_provenance(path):
    out = {}
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                out[rec["doc_id"]] = rec
            except (json.JSONDecodeError, KeyError) as e:
                raise CorpusError(f"{path}: line {n}: {e}") from None
    return out


def attach_provenance(corpus, provenance):
    for d in corpus.docs:
        rec = provenance.get(d.doc_id)
        if rec is not None:
            d.flags = dict(rec["flags"])
            d.has_confuser = bool(rec.get("has_confuser", False))
    return corpus


def write_labels(corpus, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"tasks": [{"name": t.name, "values": corpus.label_values[t.name]} for t in corpus.tasks]},
                  fh, sort_keys=True, indent=1)
        fh.write("\n")


def read_labels(path):
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    return {t["name"]: list(t["values"]) for t in data["tasks"]}


def load_jsonl(path, vocab=None, build_vocab=False, label_values=None, strict=False,
               tasks=None, min_len=0):
    """Read a JSONL corpus.

    Each line holds ``text``, ``labels`` (task -> value) and optionally
    ``doc_id`` and ``case_id``. Label values are indexed through
    ``label_values`` (task -> ordered list of values). In strict mode values
    outside those lists, or a missing task label, are errors; otherwise new
    values are appended.
    """
    if vocab is None:
        vocab = Vocabulary()
        build_vocab = True
    values = {k: list(v) for k, v in (label_values or {}).items()}
    task_names = list(tasks) if tasks is not None else (list(values) if values else None)
    index = {k: {_label_key(v): i for i, v in enumerate(vs)} for k, vs in values.items()}
    docs = []
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise CorpusError(f"{path}: line {n}: malformed JSON ({e.msg})") from None
            if not isinstance(rec, dict) or not isinstance(rec.get("text"), str) or not isinstance(rec.get("labels"), dict):
                raise CorpusError(f"{path}: line {n}: need string 'text' and object 'labels'")
            if task_names is None:
                task_names = list(rec["labels"])
            labels = {}
            for t in task_names:
                if t not in rec["labels"]:
                    raise CorpusError(f"{path}: line {n}: missing label for task {t!r}")
                key = _label_key(rec["labels"][t])
                idx = index.setdefault(t, {})
                if key not in idx:
                    if strict:
                        raise CorpusError(f"{path}: line {n}: unknown {t} label {rec['labels'][t]!r}")
                    idx[key] = len(idx)
                    values.setdefault(t, []).append(rec["labels"][t])
                labels[t] = idx[key]
            ids = tokenize(rec["text"], vocab, min_len=min_len, build=build_vocab)
            doc_id = str(rec.get("doc_id", f"line{n}"))
            case_id = rec.get("case_id")
            docs.append(LabeledDocument(doc_id, rec["text"], ids, labels,
                                        {t: CLEAN for t in labels}, False,
                                        None if case_id is None else str(case_id)))
    task_names = task_names or []
    specs = [TaskSpec(t, max(2, len(values.get(t, [])))) for t in task_names]
    return Corpus(docs, vocab, specs, {t: values.get(t, []) for t in task_names})


def _label_key(v):
    return json.dumps(v)
