"""Scores oracle_generations.jsonl against human reference sets from first principles.

Writes oracle_expected.json. Run from this directory: python3 gen_eval_oracle.py
"""

import itertools
import json
import math
import re
import unicodedata
from collections import Counter

import numpy as np
from nltk.stem.snowball import SnowballStemmer

STEM = SnowballStemmer("english").stem


def tokenize(s):
    s = s.lower()
    s = "".join(" " if unicodedata.category(ch).startswith("P") else ch for ch in s)
    return s.split()


def grams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


val = json.load(open("val.json"))["data"]
answers = val["answers"]
dense = json.load(open("val_dense.json"))
dialogs = {d["image_id"]: d for d in val["dialogs"]}

refsets = {}
for ann in dense:
    rd = dialogs[ann["image_id"]]["dialog"][ann["round_id"] - 1]
    opts = rd["answer_options"]
    members = sorted({opts[i] for i, rho in enumerate(ann["gt_relevance"]) if rho > 0 or i == rd["gt_index"]})
    refsets[(ann["image_id"], ann["round_id"])] = [tokenize(answers[a]) for a in members]

docs = [r for refs in refsets.values() for r in refs]
N = len(docs)
df = [Counter() for _ in range(4)]
for d in docs:
    for n in range(1, 5):
        for g in set(grams(d, n)):
            df[n - 1][g] += 1


def tfidf(tokens, n):
    return {g: c * (math.log(N) - math.log(max(1, df[n - 1][g]))) for g, c in grams(tokens, n).items()}


def cos(u, v):
    nu = math.sqrt(sum(x * x for x in u.values()))
    nv = math.sqrt(sum(x * x for x in v.values()))
    if nu == 0 or nv == 0:
        return 0.0
    return min(1.0, max(0.0, sum(x * v.get(g, 0.0) for g, x in u.items()) / (nu * nv)))


def cider(c, refs, n):
    return sum(sum(cos(tfidf(c, m), tfidf(r, m)) for r in refs) / len(refs) for m in range(1, n + 1)) / n


def bleu(c, refs, n, eps=0.1):
    orders = min(n, len(c))
    logp = 0.0
    for m in range(1, orders + 1):
        cg = grams(c, m)
        clip = sum(min(k, max(grams(r, m)[g] for r in refs)) for g, k in cg.items())
        logp += math.log((clip if clip else eps) / (len(c) - m + 1))
    r = min((len(x) for x in refs), key=lambda L: (abs(L - len(c)), L))
    bp = 1.0 if len(c) > r else math.exp(1 - r / len(c))
    return min(1.0, bp * math.exp(logp / orders))


def meteor_one(c, r, alpha=0.9, beta=3.0, gamma=0.5):
    """Enumerates every injective partial alignment and keeps the best (exact, stem, -chunks)."""
    best = (0, 0, 0)
    best_chunks = 0
    choices = []
    for w in c:
        opts = [None] + [j for j, x in enumerate(r) if x == w or STEM(x) == STEM(w)]
        choices.append(opts)
    for pick in itertools.product(*choices):
        used = [j for j in pick if j is not None]
        if len(used) != len(set(used)):
            continue
        exact = sum(1 for i, j in enumerate(pick) if j is not None and r[j] == c[i])
        stem = len(used) - exact
        chunks, prev = 0, None
        for j in pick:
            if j is not None and (prev is None or j != prev + 1):
                chunks += 1
            prev = j
        key = (exact, stem, -chunks)
        if key > best:
            best, best_chunks = key, chunks
    m = best[0] + best[1]
    if m == 0:
        return 0.0
    p, rc = m / len(c), m / len(r)
    fmean = p * rc / (alpha * p + (1 - alpha) * rc)
    frag = 0.0 if (m == len(c) == len(r) and best_chunks == 1) else best_chunks / m
    return fmean * (1 - gamma * frag ** beta)


vecs = {}
with open("words.vec") as f:
    next(f)
    for line in f:
        parts = line.split()
        vecs[parts[0]] = np.array([np.float32(x) for x in parts[1:]], dtype=np.float64)
DIM = len(next(iter(vecs.values())))


def sent(tokens):
    if not tokens:
        return np.zeros(DIM)
    return np.mean([vecs.get(t, np.zeros(DIM)) for t in tokens], axis=0)


def l2_cs(c, refs):
    cv = sent(c)
    l2, cs = [], []
    for r in refs:
        rv = sent(r)
        l2.append(float(np.linalg.norm(cv - rv)))
        denom = np.linalg.norm(cv) * np.linalg.norm(rv)
        cs.append(0.0 if denom == 0 else float(cv @ rv / denom))
    return sum(l2) / len(l2), sum(cs) / len(cs)


rows = []
for line in open("oracle_generations.jsonl"):
    g = json.loads(line)
    c = tokenize(g["generations"][0])
    refs = refsets[(g["image_id"], g["round_id"])]
    s = {f"cider{n}": cider(c, refs, n) for n in range(1, 5)}
    s.update({f"bleu{n}": bleu(c, refs, n) for n in range(1, 5)})
    s["meteor"] = max(meteor_one(c, r) for r in refs)
    s["l2_word"], s["cs_word"] = l2_cs(c, refs)
    rows.append(s)

expected = {k: sum(r[k] for r in rows) / len(rows) for k in rows[0]}
with open("oracle_expected.json", "w") as f:
    json.dump({"rounds": len(rows), "mu": expected}, f, indent=1, sort_keys=True)
    f.write("\n")
print(json.dumps(expected, indent=1))
