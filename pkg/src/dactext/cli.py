"""Command-line entry point: ``dactext <command> [options]``.

Commands are independent processes that exchange files with fixed names
under ``--out``. Every command writes ``config.snapshot.ini`` holding the
fully resolved configuration it ran with.

Exit codes: 0 success, 1 usage or config error, 2 data error, 3 numerical
failure.
"""
import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import corpus as corpus_mod
from .checkpoint import CheckpointError, load_checkpoint, load_into, save_checkpoint
from .config import RunConfig, RunConfigError
from .corpus import CorpusError, Vocabulary
from .explain import explain_fn, render_explanation, Explanation
from .metrics import (ABSTAIN, Predictions, abstention_audit, audit_tsv, combo_metrics, combos_tsv,
                      metrics_text, metrics_tsv, predict_records, render_table, selective_metrics)
from .model import ConfigError, PAD_ID, model_init
from .nn import NonFiniteError, make_rng
from .stats import (NOT_PICKED_GROUP, NOT_PICKED_IN_REPORT, StatsError, association_from_counts,
                    association_tsv, attribution_from_record, build_association_table, select_groups)
from .train import DivergenceError, budget_sweep, frontier_violations, history_tsv, train

log = logging.getLogger("dactext")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

SNAPSHOT = "config.snapshot.ini"


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -- helpers -----------------------------------------------------------------------

def _load_config(args):
    cfg = RunConfig.from_file(args.config) if getattr(args, "config", None) else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg.set("run", "seed", args.seed)
    if getattr(args, "threads", None) is not None:
        cfg.set("run", "threads", args.threads)
    return cfg.validate()


def _outdir(path):
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as e:
        raise DataError(f"cannot create output directory {path}: {e}") from None
    if not os.access(path, os.W_OK):
        raise DataError(f"output directory {path} is not writable")
    return path


def _write(path, text):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def _jsonl(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


def _read_jsonl(path):
    out = []
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            if line.strip():
                try:
                    out.append(json.loads(line))
                except json.JSONDecodeError as e:
                    raise DataError(f"{path}: line {n}: malformed JSON ({e.msg})") from None
    return out


def _load_data(data_dir, vocab=None, label_values=None, min_len=0):
    """Corpus from a data directory; provenance attached when the sidecar exists."""
    path = os.path.join(data_dir, "corpus.jsonl")
    if not os.path.exists(path):
        raise DataError(f"{data_dir}: no corpus.jsonl")
    strict = label_values is not None
    if vocab is None and os.path.exists(os.path.join(data_dir, "vocab.txt")):
        vocab = Vocabulary.load(os.path.join(data_dir, "vocab.txt"))
    if label_values is None and os.path.exists(os.path.join(data_dir, "labels.json")):
        label_values = corpus_mod.read_labels(os.path.join(data_dir, "labels.json"))
    build = vocab is None
    corp = corpus_mod.load_jsonl(path, vocab=vocab, build_vocab=build, label_values=label_values,
                                 strict=strict, min_len=min_len)
    prov_path = os.path.join(data_dir, "provenance.jsonl")
    provenance = None
    if os.path.exists(prov_path):
        provenance = corpus_mod.read_provenance(prov_path)
        corpus_mod.attach_provenance(corp, provenance)
    return corp, provenance


def _load_model(path):
    model = load_checkpoint(path)
    meta = model.metadata
    if "vocab" not in meta or "label_values" not in meta:
        raise DataError(f"{path}: checkpoint lacks vocabulary or label metadata")
    return model, Vocabulary(meta["vocab"][2:]), meta["label_values"]


def _read_splits(path):
    out = {}
    with open(path, encoding="utf-8") as fh:
        next(fh)
        for line in fh:
            doc_id, part = line.rstrip("\n").split("\t")
            out[doc_id] = part
    return out


def _select_split(corp, split, splits_path):
    if split == "all":
        return corp
    if not splits_path or not os.path.exists(splits_path):
        raise DataError(f"--split {split} needs a splits file (looked for {splits_path})")
    parts = _read_splits(splits_path)
    return corp.subset([d for d in corp.docs if parts.get(d.doc_id) == split])


def _prediction_records(preds):
    recs = []
    for i, doc_id in enumerate(preds.doc_ids):
        recs.append({"doc_id": doc_id,
                     "gold": {t: int(preds.gold[i, j]) for j, t in enumerate(preds.tasks)},
                     "pred": {t: int(preds.pred[i, j]) for j, t in enumerate(preds.tasks)},
                     "base": {t: int(preds.base[i, j]) for j, t in enumerate(preds.tasks)}})
    return recs


def _predictions_from_records(recs):
    if not recs:
        raise DataError("prediction file is empty")
    tasks = list(recs[0]["gold"])
    mat = lambda k: np.array([[r[k][t] for t in tasks] for r in recs], dtype=np.int64)
    return Predictions([r["doc_id"] for r in recs], tasks, mat("gold"), mat("pred"), mat("base"))


def _class_names(label_values, task, k):
    names = [str(v) for v in label_values.get(task, [])]
    return names + [str(i) for i in range(len(names), k)]


def _parse_list(s):
    return [x.strip() for x in s.split(",") if x.strip()]


# -- commands ----------------------------------------------------------------------

def cmd_generate(args):
    cfg = _load_config(args)
    spec = cfg.synthetic_spec()
    out = _outdir(args.out)
    corp = corpus_mod.generate_corpus(spec, make_rng(cfg.seed))
    corpus_mod.write_jsonl(corp, os.path.join(out, "corpus.jsonl"))
    corpus_mod.write_provenance(corp, os.path.join(out, "provenance.jsonl"))
    corp.vocab.save(os.path.join(out, "vocab.txt"))
    corpus_mod.write_labels(corp, os.path.join(out, "labels.json"))
    cfg.write_snapshot(os.path.join(out, SNAPSHOT))
    print(f"wrote {len(corp)} documents, vocabulary {len(corp.vocab)} to {out}")
    return EXIT_OK


def cmd_train(args):
    cfg = _load_config(args)
    out = _outdir(args.out)
    corp, _ = _load_data(args.data)
    tcfg = cfg.train_config(corp.task_names)
    mcfg = cfg.model_config(len(corp.vocab), corp.tasks)
    parts = corpus_mod.split(corp, cfg.split_spec(), make_rng(cfg.seed))
    with open(os.path.join(out, "splits.tsv"), "w", encoding="utf-8") as fh:
        fh.write("doc_id\tsplit\n")
        for name, part in zip(("train", "val", "test"), parts):
            for d in part.docs:
                fh.write(f"{d.doc_id}\t{name}\n")
    model = model_init(mcfg, make_rng(cfg.seed))
    if args.resume:
        load_into(model, args.resume)
    cfg.write_snapshot(os.path.join(out, SNAPSHOT))
    hist_path = os.path.join(out, "history.tsv")
    try:
        model, history = train(model, parts[0], parts[1], tcfg)
    except DivergenceError as e:
        _write(hist_path, history_tsv(e.history, corp.task_names))
        raise
    _write(hist_path, history_tsv(history, corp.task_names))
    save_checkpoint(model, os.path.join(out, "checkpoint.dac"),
                    {"vocab": corp.vocab.tokens, "label_values": corp.label_values})
    best = model.metadata.get("best_epoch")
    print(f"trained {len(history)} epochs, best epoch {best}; checkpoint in {out}")
    return EXIT_OK


def _eval_inputs(args):
    model, vocab, label_values = _load_model(args.checkpoint)
    corp, provenance = _load_data(args.data, vocab=vocab, label_values=label_values)
    splits = args.splits or os.path.join(os.path.dirname(os.path.abspath(args.checkpoint)), "splits.tsv")
    part = _select_split(corp, args.split, splits)
    if len(part) == 0:
        raise DataError(f"split {args.split!r} is empty")
    return model, part, provenance


def cmd_eval(args):
    cfg = _load_config(args)
    out = _outdir(args.out)
    model, part, provenance = _eval_inputs(args)
    preds = predict_records(model, part)
    names = preds.tasks
    tasks = _parse_list(args.tasks) if args.tasks else names
    combos = [_parse_list(c) for c in (args.combos or [])]
    for t in tasks + [t for c in combos for t in c]:
        if t not in names:
            raise UsageError(f"unknown task {t!r}; model has {', '.join(names)}")
    per_task = selective_metrics(preds)
    per_task = {t: per_task[t] for t in tasks}
    combo_rows = [combo_metrics(preds, c) for c in combos]
    _write(os.path.join(out, "metrics.tsv"), metrics_tsv(per_task))
    text = metrics_text(per_task, combo_rows)
    if combo_rows:
        _write(os.path.join(out, "combos.tsv"), combos_tsv(combo_rows))
    if provenance is not None:
        rows = [r for r in abstention_audit(preds, part, provenance) if r.task in tasks]
        _write(os.path.join(out, "audit.tsv"), audit_tsv(rows))
        text += "\nAbstention audit\n" + render_table(
            ["Task", "Flag", "Abstained with", "Retained with", "Enrichment"],
            [[r.task, r.flag, f"{r.abstained_with}/{r.abstained}", f"{r.retained_with}/{r.retained}",
              r.enrichment if isinstance(r.enrichment, str) else f"{r.enrichment:.2f}"] for r in rows])
    _write(os.path.join(out, "metrics.txt"), text)
    _jsonl(os.path.join(out, "predictions.jsonl"), _prediction_records(preds))
    cfg.write_snapshot(os.path.join(out, SNAPSHOT))
    sys.stdout.write(text)
    return EXIT_OK


def cmd_explain(args):
    cfg = _load_config(args)
    out = _outdir(args.out)
    lime = cfg.lime_config()
    model, part, _ = _eval_inputs(args)
    names = model.config.task_names()
    if args.task not in names:
        raise UsageError(f"unknown task {args.task!r}; model has {', '.join(names)}")
    ti = names.index(args.task)
    k = model.config.tasks[ti].num_classes
    by_id = part.by_id()
    if args.doc_ids:
        ids = _parse_list(args.doc_ids)
        unknown = [i for i in ids if i not in by_id]
        if unknown:
            raise DataError(f"unknown doc id(s): {', '.join(unknown)}")
        docs = [by_id[i] for i in ids]
    else:
        preds = predict_records(model, part)
        groups = select_groups(preds, part, args.task, args.sample_per_class, make_rng(cfg.seed))
        docs = [d for c in sorted(groups) for side in groups[c] for d in side]
    sub = part.subset(docs)
    preds = predict_records(model, sub)
    col = preds.column(args.task)
    class_names = _class_names(model.metadata["label_values"], args.task, k)
    vocab = part.vocab
    min_len = model.config.min_len

    def run(i):
        d = sub.docs[i]
        target = int(preds.pred[i, col])
        target = k if target == ABSTAIN else target
        doc = np.asarray(d.ids, dtype=np.int64)[:model.config.max_len]
        if len(doc) < min_len:
            doc = np.concatenate([doc, np.full(min_len - len(doc), PAD_ID, dtype=np.int64)])

        def predict(batch, lengths):
            return model.predict_proba_ids(batch, lengths)[ti][:, target]
        label = "ABSTAIN" if target == k else class_names[target]
        return explain_fn(predict, doc, lime, d.doc_id, args.task, target, label, vocab)

    with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
        exps = list(pool.map(run, range(len(sub))))
    _jsonl(os.path.join(out, "explanations.jsonl"), [e.to_record() for e in exps])
    _write(os.path.join(out, "explanations.txt"), "\n".join(render_explanation(e, top=args.top) for e in exps))
    _jsonl(os.path.join(out, "predictions.jsonl"), _prediction_records(preds))
    cfg.write_snapshot(os.path.join(out, SNAPSHOT))
    print(f"explained {len(exps)} documents for task {args.task}")
    return EXIT_OK


COUNT_COLUMNS = ["site", "word", "n_correct", "n_abstained", "in_correct", "in_abstained",
                 "id_correct", "pos_correct", "id_abstained", "pos_abstained"]


def read_counts(path, not_picked=NOT_PICKED_GROUP):
    """Association records from a TSV of raw counts (one row per class and stem)."""
    records = []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        missing = [c for c in COUNT_COLUMNS if c not in header]
        if missing:
            raise DataError(f"{path}: missing columns {', '.join(missing)}")
        for n, line in enumerate(fh, 2):
            if not line.strip() or line.startswith("#"):
                continue
            row = dict(zip(header, line.rstrip("\n").split("\t")))
            try:
                vals = [int(row[c]) for c in COUNT_COLUMNS[2:]]
                records.append(association_from_counts(row["site"], row["word"], *vals, not_picked=not_picked))
            except (KeyError, ValueError) as e:
                raise DataError(f"{path}: line {n}: {e}") from None
    return records


def _attribution_lines(records):
    lines = []
    for r in records:
        a = attribution_from_record(r)
        lines.append(f"{r.cls}\t{r.stem}\t{a.describe()}")
    return "\n".join(lines) + "\n"


def cmd_associate(args):
    cfg = _load_config(args)
    out = _outdir(args.out)
    if args.from_counts:
        records = read_counts(args.from_counts, args.not_picked)
    else:
        stems = _parse_list(args.stems or "")
        if not stems:
            raise UsageError("stem list is empty")
        if not args.explanations or not args.data:
            raise UsageError("--explanations and --data are required without --from-counts")
        exps = [Explanation.from_record(r) for r in _read_jsonl(os.path.join(args.explanations, "explanations.jsonl"))]
        if not exps:
            raise DataError("no explanations to associate")
        tasks = sorted({e.task for e in exps})
        if len(tasks) != 1:
            raise DataError(f"explanations cover several tasks: {', '.join(tasks)}")
        preds = _predictions_from_records(_read_jsonl(os.path.join(args.explanations, "predictions.jsonl")))
        corp, _ = _load_data(args.data)
        keep = set(preds.doc_ids)
        corp = corp.subset([d for d in corp.docs if d.doc_id in keep])
        groups = select_groups(preds, corp, tasks[0])
        k = int(max(preds.gold[:, preds.column(tasks[0])])) + 1
        names = _class_names(corp.label_values or {}, tasks[0], k)
        records = build_association_table(groups, {e.doc_id: e for e in exps}, stems, names, args.not_picked)
    _write(os.path.join(out, "associations.tsv"), association_tsv(records))
    _write(os.path.join(out, "attribution.txt"), _attribution_lines(records))
    cfg.write_snapshot(os.path.join(out, SNAPSHOT))
    sys.stdout.write(association_tsv(records))
    return EXIT_OK


def cmd_sweep(args):
    cfg = _load_config(args)
    out = _outdir(args.out)
    corp, _ = _load_data(args.data)
    budgets = [float(b) for b in _parse_list(args.budgets)]
    parts = corpus_mod.split(corp, cfg.split_spec(), make_rng(cfg.seed))
    rows = budget_sweep(parts[0], parts[1], parts[2], cfg.model_config(len(corp.vocab), corp.tasks),
                        cfg.train_config(corp.task_names), budgets)
    lines = ["budget\tseed\tabstention\tretained_accuracy\tbase_accuracy"]
    for r in rows:
        ra = "NA" if r["retained_accuracy"] is None else f"{r['retained_accuracy']:.6f}"
        lines.append(f"{r['budget']:.4f}\t{r['seed']}\t{r['abstention']:.6f}\t{ra}\t{r['base_accuracy']:.6f}")
    _write(os.path.join(out, "sweep.tsv"), "\n".join(lines) + "\n")
    cfg.write_snapshot(os.path.join(out, SNAPSHOT))
    bad = frontier_violations(rows)
    print("\n".join(lines))
    if bad:
        print(f"frontier not monotone at budget pairs {bad}")
    return EXIT_OK


# -- parser ------------------------------------------------------------------------

def build_parser():
    p = _Parser(prog="dactext", description="Abstaining multi-task text classifiers.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, data=True):
        sp.add_argument("--config", help="INI run configuration")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--seed", type=int, help="override [run] seed")
        sp.add_argument("--threads", type=int, help="cap on worker threads")
        if data:
            sp.add_argument("--data", required=True, help="directory holding corpus.jsonl")

    def evaluating(sp):
        sp.add_argument("--checkpoint", required=True)
        sp.add_argument("--split", default="test", choices=("train", "val", "test", "all"))
        sp.add_argument("--splits", help="splits.tsv (default: next to the checkpoint)")

    sp = sub.add_parser("generate", help="write a synthetic corpus")
    common(sp, data=False)
    sp.set_defaults(func=cmd_generate)

    sp = sub.add_parser("train", help="train a model")
    common(sp)
    sp.add_argument("--resume", help="start from the parameters of this checkpoint")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="selective-prediction reports")
    common(sp)
    evaluating(sp)
    sp.add_argument("--tasks", help="comma-separated tasks to report (default: all)")
    sp.add_argument("--combos", action="append", help="comma-separated task combination; repeatable")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("explain", help="perturbation explanations for predicted classes")
    common(sp)
    evaluating(sp)
    sp.add_argument("--task", required=True)
    sel = sp.add_mutually_exclusive_group(required=True)
    sel.add_argument("--doc-ids", help="comma-separated document ids")
    sel.add_argument("--sample-per-class", type=int, help="documents per (class, correct|abstained) group")
    sp.add_argument("--top", type=int, default=10, help="word instances shown per rendering")
    sp.set_defaults(func=cmd_explain)

    sp = sub.add_parser("associate", help="word association tests and attribution")
    common(sp, data=False)
    sp.add_argument("--data", help="directory holding corpus.jsonl")
    sp.add_argument("--explanations", help="directory written by the explain command")
    sp.add_argument("--stems", help="comma-separated word stems")
    sp.add_argument("--from-counts", help="TSV of raw counts instead of explanations")
    sp.add_argument("--not-picked", default=NOT_PICKED_GROUP, choices=(NOT_PICKED_GROUP, NOT_PICKED_IN_REPORT),
                    help="first pickup-table column: whole group or in-report documents only")
    sp.set_defaults(func=cmd_associate)

    sp = sub.add_parser("sweep", help="one training per abstention budget")
    common(sp)
    sp.add_argument("--budgets", required=True, help="comma-separated budgets")
    sp.set_defaults(func=cmd_sweep)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, RunConfigError, ConfigError) as e:
        print(f"dactext: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, CorpusError, CheckpointError, StatsError, OSError) as e:
        print(f"dactext: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (DivergenceError, NonFiniteError, FloatingPointError) as e:
        print(f"dactext: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
