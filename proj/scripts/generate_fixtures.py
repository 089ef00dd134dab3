#!/usr/bin/env python3
"""Regenerate the committed test fixtures.

Builds the synthetic-weight encoder (same splitmix64 construction as
tests/support/synthetic.cpp) inside the HuggingFace BERT implementation and
records reference logits and attention checksums, plus tokenizer outputs
from the HuggingFace tokenizer, plus the toy corpus used by the suite.

    python3 scripts/generate_fixtures.py --out tests
"""

import argparse
import inspect
import json
import os
import random
import re
import shutil
import tempfile

import numpy as np

SEED = 20240917
MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15

STOP = set("""a an and are as at be by for from has he in is it its of on that the to was
were will with this which or not but can if you your we they their i what how""".split())


def fnv1a(text):
    h = 0xCBF29CE484222325
    for b in text.encode():
        h ^= b
        h = (h * 0x100000001B3) & MASK64
    return h


def splitmix_stream(state, n):
    i = np.arange(1, n + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = np.uint64(state) + i * np.uint64(GOLDEN)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        z = z ^ (z >> np.uint64(31))
    return z


def law(name):
    if name.endswith("LayerNorm.weight"):
        return 1.0, 0.125
    if name.endswith("LayerNorm.bias"):
        return 0.0, 0.0625
    if name == "embeddings.word_embeddings.weight":
        return 0.0, 0.5
    if "embeddings" in name:
        return 0.0, 0.25
    if name in ("classifier.weight", "classifier.bias"):
        return 0.0, 0.25
    if name.endswith(".bias"):
        return 0.0, 0.0625
    if name.endswith("query.weight") or name.endswith("key.weight"):
        return 0.0, 0.125
    if "layer." in name and name.endswith(".output.dense.weight") and "attention" not in name:
        return 0.0, 0.03125
    return 0.0, 0.0625


def synthetic_tensor(name, shape, seed=SEED):
    n = int(np.prod(shape))
    z = splitmix_stream(fnv1a(name) ^ seed, n)
    bits = (z >> np.uint64(40)).astype(np.int64) - (1 << 23)
    offset, scale = law(name)
    u = bits.astype(np.float64) / float(1 << 23)
    return (offset + scale * u).astype(np.float32).reshape(shape)


def build_model():
    import torch
    from transformers import BertConfig, BertForSequenceClassification

    cfg = BertConfig(vocab_size=30522, hidden_size=384, num_hidden_layers=12,
                     num_attention_heads=12, intermediate_size=1536,
                     max_position_embeddings=512, type_vocab_size=2, num_labels=1,
                     hidden_act="gelu", layer_norm_eps=1e-12)
    model = BertForSequenceClassification._from_config(cfg, attn_implementation="eager")
    state = {}
    for key, tensor in model.state_dict().items():
        if not tensor.is_floating_point():
            continue
        name = key[len("bert."):] if key.startswith("bert.") else key
        state[key] = torch.from_numpy(synthetic_tensor(name, tuple(tensor.shape)))
    missing, unexpected = model.load_state_dict(state, strict=False)
    assert not unexpected, unexpected
    assert all("position_ids" in m or "token_type_ids" in m for m in missing), missing
    model.eval()
    return model


def load_tokenizer(vocab):
    from transformers import BertTokenizerFast

    d = tempfile.mkdtemp()
    shutil.copy(vocab, os.path.join(d, "vocab.txt"))
    tok = BertTokenizerFast.from_pretrained(d, do_lower_case=True)
    shutil.rmtree(d)
    return tok


def text_sources():
    import sklearn

    texts = []
    descr = os.path.join(os.path.dirname(sklearn.__file__), "datasets", "descr")
    for fn in sorted(os.listdir(descr)):
        if fn.endswith(".rst"):
            with open(os.path.join(descr, fn), encoding="utf-8") as f:
                texts.append(f.read())
    import argparse as m0, collections as m1, email as m2, functools as m3, http.client as m4
    import itertools as m5, json as m6, logging as m7, os as m8, re as m9, string as m10
    import textwrap as m11, unittest as m12, urllib.request as m13, shutil as m14, random as m15
    import decimal as m16, fractions as m17, statistics as m18, pathlib as m19, csv as m20
    for mod in (m0, m1, m2, m3, m4, m5, m6, m7, m8, m9, m10, m11, m12, m13, m14, m15, m16, m17,
                m18, m19, m20):
        for _, obj in sorted(vars(mod).items()):
            doc = inspect.getdoc(obj) if (inspect.isfunction(obj) or inspect.isclass(obj)) else None
            if doc:
                texts.append(doc)
    return texts


def sentences(texts):
    out = []
    seen = set()
    for t in texts:
        t = re.sub(r"\s+", " ", t)
        for s in re.split(r"(?<=[.!?])\s+", t):
            s = s.strip()
            words = s.split()
            if not (6 <= len(words) <= 40):
                continue
            alpha = sum(w.strip(".,;:()'\"").isalpha() for w in words)
            if alpha < 0.7 * len(words) or s in seen or not s.endswith("."):
                continue
            if any(c in s for c in "=>|*`_\\{}[]"):
                continue
            seen.add(s)
            out.append(s)
    return out


def content_words(text):
    words = [w.strip(".,;:()'\"!?").lower() for w in text.split()]
    return [w for w in words if w.isalpha() and w not in STOP and len(w) > 2]


def make_pairs(sents, rng, n, max_sentences=3):
    pairs = []
    while len(pairs) < n:
        i = rng.randrange(len(sents))
        doc = " ".join(sents[i:i + rng.randint(1, max_sentences)])
        words = content_words(sents[i])
        if len(words) < 2:
            continue
        q = rng.sample(words, min(len(words), rng.randint(1, 5)))
        if rng.random() < 0.3:
            q = [rng.choice(["what is", "how to", "define", "why"])] + q
        pairs.append((" ".join(q), doc))
    return pairs


UNICODE_POOLS = [
    "abcdefghijklmnopqrstuvwxyz ABCDEFGHIJKLMNOPQRSTUVWXYZ 0123456789",
    "àáâãäåæçèéêëìíîïñòóôõöøùúûüýÿ ÀÉÎÕÜ ßœŒ ĀăĄćČďĐėĘěĞğĪıŁńŇőŘśŠťŪůŹżŽ",
    "αβγδεζηθικλμνξοπρστυφχψω ΑΒΓΔΣΩ άέήίόύώ ϊϋΐΰ",
    "абвгдеёжзийклмнопрстуфхцчшщъыьэюя АБВГДЕЁЖЗ",
    "中文字符測試日本語のテキスト한국어텍스트",
    "!\"#$%&'()*+,-./:;<=>?@[\\]^_`{|}~ ¡¿«»–—‘’“”…•·※",
    "̧́̈​‍﻿­",
    "\t\n\r   　  \u0085",
    "\x00\x01\x07\x1b\x7f�",
    "😀🎉👍🏽🚀∑∫√∞≈≠ℓ™©®°±×÷",
    "ﬁﬂ ① ½ ² Ⅻ ｆｕｌｌｗｉｄｔｈ ﾊﾝｶｸ",
]


def unicode_case(rng):
    parts = []
    for _ in range(rng.randint(1, 12)):
        pool = rng.choice(UNICODE_POOLS)
        parts.append("".join(rng.choice(pool) for _ in range(rng.randint(1, 8))))
        if rng.random() < 0.5:
            parts.append(" ")
    if rng.random() < 0.2:
        parts.insert(rng.randrange(len(parts) + 1), rng.choice(["[SEP]", "[CLS]", "[unk]", "[MASK]", "[PAD]"]))
    return "".join(parts)


def write_jsonl(path, records):
    with open(path, "w", encoding="utf-8") as f:
        for r in records:
            f.write(json.dumps(r, ensure_ascii=False) + "\n")


def tokenizer_fixtures(tok, sents, rng, n):
    recs = []
    n_plain = n // 2
    n_unicode = n // 5
    n_pair = n - n_plain - n_unicode
    for _ in range(n_plain):
        s = " ".join(sents[rng.randrange(len(sents))] for _ in range(rng.randint(1, 2)))
        if rng.random() < 0.3:
            s = s.upper() if rng.random() < 0.5 else s.title()
        recs.append({"text": s, "ids": tok(s, add_special_tokens=False)["input_ids"]})
    for _ in range(n_unicode):
        s = unicode_case(rng)
        recs.append({"text": s, "ids": tok(s, add_special_tokens=False)["input_ids"]})
    for k in range(n_pair):
        q, d = make_pairs(sents, rng, 1)[0]
        if k % 10 == 0:
            d = " ".join(sents[rng.randrange(len(sents))] for _ in range(60))
        ids = tok(q, d, truncation="only_second", max_length=512)["input_ids"]
        recs.append({"text": q, "pair": d, "ids": ids})
    return recs


def forward_fixtures(model, tok, sents, rng, n):
    import torch

    recs = []
    pairs = make_pairs(sents, rng, n)
    with torch.no_grad():
        for q, d in pairs:
            enc = tok(q, d, truncation="only_second", max_length=128, return_tensors="pt")
            out = model(**enc, output_attentions=True)
            sums = []
            for att in out.attentions:
                t = att.shape[-1]
                j = torch.arange(t, dtype=torch.float64)
                sums.extend((att[0].double() * j).sum(dim=(1, 2)).tolist())
            recs.append({
                "query": q,
                "doc": d,
                "input_ids": enc["input_ids"][0].tolist(),
                "token_type_ids": enc["token_type_ids"][0].tolist(),
                "logit": float(out.logits[0, 0]),
                "attn_checksums": [round(x, 6) for x in sums],
            })
    return recs


def toy_corpus(sents, rng, n):
    rows = []
    for i, (q, d) in enumerate(make_pairs(sents, rng, n, max_sentences=4)):
        rows.append(f"q{i}\t{q}\td{i}\t{d}")
    return rows


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="tests")
    ap.add_argument("--n-forward", type=int, default=1000)
    ap.add_argument("--n-tokenizer", type=int, default=1000)
    ap.add_argument("--n-corpus", type=int, default=400)
    ap.add_argument("--skip-forward", action="store_true")
    args = ap.parse_args()

    fixtures = os.path.join(args.out, "fixtures")
    data = os.path.join(args.out, "data")
    os.makedirs(data, exist_ok=True)
    vocab = os.path.join(fixtures, "vocab.txt")
    tok = load_tokenizer(vocab)
    sents = sentences(text_sources())

    write_jsonl(os.path.join(fixtures, "tokenizer.jsonl"),
                tokenizer_fixtures(tok, sents, random.Random(SEED + 1), args.n_tokenizer))
    with open(os.path.join(data, "toy_corpus.tsv"), "w", encoding="utf-8") as f:
        f.write("# query_id\tquery\tdoc_id\tdoc\n")
        f.write("\n".join(toy_corpus(sents, random.Random(SEED + 3), args.n_corpus)) + "\n")
    if not args.skip_forward:
        model = build_model()
        write_jsonl(os.path.join(fixtures, "forward.jsonl"),
                    forward_fixtures(model, tok, sents, random.Random(SEED + 2), args.n_forward))


if __name__ == "__main__":
    main()
