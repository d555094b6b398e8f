"""Sectioned INI run configuration.

Every key has a default; a config file overrides a subset. Unknown sections
or keys are rejected. The fully resolved configuration is written next to
every command's outputs so a run can be reproduced from it alone.

Per-task budgets are given as ``budget.<task>`` keys in ``[train]``; per-task
flip rates as ``site:0.2,behavior:0.1`` in ``[synthetic] flip_rate``.
"""
import configparser
import io

from .corpus import SplitSpec, SyntheticSpec
from .explain import PerturbationConfig
from .loss import AbstentionConfig
from .model import ModelConfig, TaskSpec
from .train import TrainConfig


class RunConfigError(ValueError):
    pass


DEFAULTS = {
    "run": {"seed": "0", "threads": "1"},
    "synthetic": {
        "tasks": "site:4", "n_docs": "2000", "vocab_size": "2000",
        "doc_len_min": "30", "doc_len_max": "80", "signal_tokens_per_class": "8",
        "signal_rate_min": "0.0", "signal_rate_max": "0.25", "flip_rate": "0.0",
        "confuser_rate": "0.0", "confuser_corrupt_prob": "0.8", "confuser_task": "",
        "confuser_tokens": "3", "confuser_len": "3", "docs_per_case": "1",
        "case_support_prob": "1.0",
    },
    "split": {"fractions": "0.6,0.2,0.2", "by_case": "true"},
    "model": {"embed_dim": "300", "filter_widths": "3,4,5", "filters_per_width": "300",
              "max_len": "1500", "dropout": "0.0"},
    "train": {
        "epochs": "20", "batch_size": "32", "lr": "0.001", "beta1": "0.9", "beta2": "0.999",
        "eps": "1e-08", "budget": "0.5", "alpha_init": "2.0", "warmup_epochs": "5",
        "up_factor": "1.2", "down_factor": "1.2", "slack": "0.1", "alpha_min": "0.001",
        "alpha_max": "1000.0", "patience": "0", "abstain": "true",
    },
    "lime": {"num_samples": "2000", "top_k": "40", "kernel_width": "", "ridge": "1.0",
             "batch_size": "256", "seed": "0"},
}


def _bool(s):
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _tasks(s):
    out = []
    for part in s.split(","):
        name, _, k = part.strip().partition(":")
        out.append(TaskSpec(name.strip(), int(k)))
    return out


def _floats(s):
    return tuple(float(x) for x in s.split(","))


def _ints(s):
    return tuple(int(x) for x in s.split(","))


def _rates(s):
    if ":" not in s:
        return float(s)
    return {k.strip(): float(v) for k, v in (p.split(":") for p in s.split(","))}


class RunConfig:
    def __init__(self, values=None):
        self.values = {sec: dict(keys) for sec, keys in DEFAULTS.items()}
        for sec, keys in (values or {}).items():
            for k, v in keys.items():
                self.set(sec, k, v)

    @classmethod
    def from_file(cls, path):
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        try:
            with open(path, encoding="utf-8") as fh:
                parser.read_file(fh)
        except configparser.Error as e:
            raise RunConfigError(f"{path}: {e}") from None
        return cls({s: dict(parser.items(s)) for s in parser.sections()})

    def set(self, section, key, value):
        if section not in DEFAULTS:
            raise RunConfigError(f"unknown section [{section}]")
        if key not in DEFAULTS[section] and not (section == "train" and key.startswith("budget.")):
            raise RunConfigError(f"unknown key {section}.{key}")
        self.values[section][key] = str(value).strip()

    def get(self, section, key, conv=str):
        raw = self.values[section][key]
        try:
            return conv(raw)
        except (TypeError, ValueError) as e:
            raise RunConfigError(f"{section}.{key}: {e}") from None

    @property
    def seed(self):
        return self.get("run", "seed", int)

    @property
    def threads(self):
        return max(1, self.get("run", "threads", int))

    def _build(self, section, fn):
        try:
            return fn()
        except RunConfigError:
            raise
        except (TypeError, ValueError) as e:
            raise RunConfigError(f"[{section}] {e}") from None

    def synthetic_spec(self):
        g = lambda k, c=str: self.get("synthetic", k, c)
        return self._build("synthetic", lambda: SyntheticSpec(
            tasks=g("tasks", _tasks), n_docs=g("n_docs", int), vocab_size=g("vocab_size", int),
            doc_len_min=g("doc_len_min", int), doc_len_max=g("doc_len_max", int),
            signal_tokens_per_class=g("signal_tokens_per_class", int),
            signal_rate_min=g("signal_rate_min", float), signal_rate_max=g("signal_rate_max", float),
            flip_rate=g("flip_rate", _rates), confuser_rate=g("confuser_rate", float),
            confuser_corrupt_prob=g("confuser_corrupt_prob", float),
            confuser_task=g("confuser_task") or None, confuser_tokens=g("confuser_tokens", int),
            confuser_len=g("confuser_len", int), docs_per_case=g("docs_per_case", int),
            case_support_prob=g("case_support_prob", float), seed=self.seed))

    def split_spec(self):
        return self._build("split", lambda: SplitSpec(self.get("split", "fractions", _floats),
                                                      self.get("split", "by_case", _bool)))

    def model_config(self, vocab_size, tasks):
        g = lambda k, c=str: self.get("model", k, c)
        return self._build("model", lambda: ModelConfig(
            vocab_size=vocab_size, tasks=list(tasks), embed_dim=g("embed_dim", int),
            filter_widths=g("filter_widths", _ints), filters_per_width=g("filters_per_width", int),
            max_len=g("max_len", int), dropout=g("dropout", float), seed=self.seed))

    def train_config(self, task_names=()):
        g = lambda k, c=str: self.get("train", k, c)

        def build():
            base = AbstentionConfig(
                budget=g("budget", float), alpha_init=g("alpha_init", float),
                warmup_epochs=g("warmup_epochs", int), up_factor=g("up_factor", float),
                down_factor=g("down_factor", float), slack=g("slack", float),
                alpha_min=g("alpha_min", float), alpha_max=g("alpha_max", float))
            per_task = {}
            for key in self.values["train"]:
                if key.startswith("budget."):
                    task = key.split(".", 1)[1]
                    if task_names and task not in task_names:
                        raise RunConfigError(f"train.{key}: unknown task {task!r}")
                    per_task[task] = AbstentionConfig(**{**base.__dict__, "budget": g(key, float), "alpha": None})
            return TrainConfig(
                epochs=g("epochs", int), batch_size=g("batch_size", int), lr=g("lr", float),
                beta1=g("beta1", float), beta2=g("beta2", float), eps=g("eps", float),
                abstention=base, task_abstention=per_task, patience=g("patience", int),
                abstain=g("abstain", _bool), seed=self.seed)
        return self._build("train", build)

    def lime_config(self):
        g = lambda k, c=str: self.get("lime", k, c)
        width = g("kernel_width")
        return self._build("lime", lambda: PerturbationConfig(
            num_samples=g("num_samples", int), top_k=g("top_k", int),
            kernel_width=float(width) if width else None, ridge=g("ridge", float),
            batch_size=g("batch_size", int), seed=g("seed", int)))

    def validate(self):
        self.synthetic_spec()
        self.split_spec()
        self.train_config()
        self.lime_config()
        return self

    def to_ini(self):
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        for sec in DEFAULTS:
            parser[sec] = {k: self.values[sec][k] for k in sorted(self.values[sec])}
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()

    def write_snapshot(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_ini())
