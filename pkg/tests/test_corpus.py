import json

import numpy as np
import pytest

from dactext.corpus import (CLEAN, CONFUSER, FLIPPED, CorpusError, SplitSpec, SyntheticSpec, Vocabulary,
                            generate_corpus, load_jsonl, read_labels, read_provenance, split, tokenize,
                            write_jsonl, write_labels, write_provenance)
from dactext.model import PAD_ID, UNK_ID, TaskSpec
from dactext.nn import make_rng


def test_tokenize_lowercases_and_maps_unknown():
    v = Vocabulary(["tumor", "node"])
    assert list(tokenize("Tumor, NODE; spleen", v)) == [v.id("tumor"), v.id("node"), UNK_ID]
    assert list(tokenize("node", v, min_len=3)) == [v.id("node"), PAD_ID, PAD_ID]


def test_vocab_round_trip(tmp_path):
    v = Vocabulary(["a", "b"])
    v.save(tmp_path / "v.txt")
    assert Vocabulary.load(tmp_path / "v.txt").tokens == v.tokens
    (tmp_path / "bad.txt").write_text("a\nb\n")
    with pytest.raises(CorpusError):
        Vocabulary.load(tmp_path / "bad.txt")


def test_generator_flags_and_rates():
    spec = SyntheticSpec(tasks=[TaskSpec("site", 4)], n_docs=4000, vocab_size=500, flip_rate=0.2,
                         confuser_rate=0.15, confuser_corrupt_prob=0.8)
    c = generate_corpus(spec, make_rng(0))
    flags = np.array([d.flags["site"] for d in c.docs])
    conf = np.array([d.has_confuser for d in c.docs])
    assert abs(conf.mean() - 0.15) < 0.02
    assert abs((flags == CONFUSER).sum() / conf.sum() - 0.8) < 0.04
    clean_after_conf = (flags != CONFUSER)
    assert abs((flags == FLIPPED).sum() / clean_after_conf.sum() - 0.2) < 0.03
    assert not np.any((flags == CONFUSER) & ~conf)
    assert len(c.vocab) == 500


def test_noise_always_changes_the_label():
    spec = SyntheticSpec(tasks=[TaskSpec("site", 3)], n_docs=500, vocab_size=200, flip_rate=1.0)
    c = generate_corpus(spec, make_rng(1))
    # every doc is flipped; signal tokens reveal the text class
    for d in c.docs[:100]:
        words = d.text.split()
        text_classes = {int(w[4]) for w in words if w.startswith("site") and "w" in w}
        if len(text_classes) == 1:
            assert d.labels["site"] not in text_classes


def test_same_seed_same_corpus():
    spec = SyntheticSpec(tasks=[TaskSpec("site", 2)], n_docs=50, vocab_size=100, flip_rate=0.3)
    a, b = generate_corpus(spec, make_rng(4)), generate_corpus(spec, make_rng(4))
    assert [d.text for d in a.docs] == [d.text for d in b.docs]
    assert [d.labels for d in a.docs] == [d.labels for d in b.docs]


def test_spec_validation_names_field():
    with pytest.raises(CorpusError, match="flip_rate"):
        SyntheticSpec(flip_rate=1.5)
    with pytest.raises(CorpusError, match="vocab_size"):
        SyntheticSpec(vocab_size=10)
    with pytest.raises(CorpusError, match="confuser_task"):
        SyntheticSpec(confuser_task="grade")


def test_split_fractions_and_disjointness(small_corpus):
    tr, va, te = split(small_corpus, SplitSpec(), make_rng(0))
    assert (len(tr), len(va), len(te)) == (180, 60, 60)
    ids = [set(d.doc_id for d in p.docs) for p in (tr, va, te)]
    assert not (ids[0] & ids[1]) and not (ids[1] & ids[2]) and not (ids[0] & ids[2])


def test_split_keeps_cases_together():
    spec = SyntheticSpec(tasks=[TaskSpec("site", 2)], n_docs=200, vocab_size=100, docs_per_case=4)
    c = generate_corpus(spec, make_rng(2))
    parts = split(c, SplitSpec(), make_rng(0))
    where = {}
    for i, p in enumerate(parts):
        for d in p.docs:
            where.setdefault(d.case_id, set()).add(i)
    assert all(len(s) == 1 for s in where.values())
    with pytest.raises(CorpusError):
        split(c.subset(c.docs[:8]), SplitSpec(), make_rng(0))


def test_jsonl_round_trip(small_corpus, tmp_path):
    write_jsonl(small_corpus, tmp_path / "c.jsonl")
    write_labels(small_corpus, tmp_path / "labels.json")
    write_provenance(small_corpus, tmp_path / "p.jsonl")
    back = load_jsonl(tmp_path / "c.jsonl", vocab=small_corpus.vocab,
                      label_values=read_labels(tmp_path / "labels.json"), strict=True)
    assert len(back) == len(small_corpus)
    for a, b in zip(small_corpus.docs[:20], back.docs[:20]):
        assert np.array_equal(a.ids, b.ids) and a.labels == b.labels
    prov = read_provenance(tmp_path / "p.jsonl")
    assert prov[small_corpus.docs[0].doc_id]["flags"] == small_corpus.docs[0].flags


def test_jsonl_errors_cite_line(tmp_path):
    p = tmp_path / "c.jsonl"
    p.write_text(json.dumps({"text": "a b", "labels": {"site": 1}}) + "\n{oops\n")
    with pytest.raises(CorpusError, match="line 2"):
        load_jsonl(p)
    p.write_text(json.dumps({"text": "a", "labels": {"site": 7}}) + "\n")
    with pytest.raises(CorpusError, match="unknown site label"):
        load_jsonl(p, label_values={"site": [0, 1]}, strict=True)
