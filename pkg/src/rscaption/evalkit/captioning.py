"""Caption-quality metrics: corpus BLEU, ROUGE-L, CIDEr-D and METEOR-lite.

Every metric takes parallel lists: ``hypotheses[i]`` is one string and
``references[i]`` a list of reference strings for the same image.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from functools import lru_cache
from typing import Callable, Sequence

TOKENIZER = "lowercase; punctuation split into separate tokens; whitespace split"
_TOKEN = re.compile(r"\w+|[^\w\s]")

Tokenizer = Callable[[str], list[str]]


class MetricError(ValueError):
    pass


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


def _prepare(hypotheses, references, tokenizer):
    if not hypotheses:
        raise MetricError("empty corpus")
    if len(hypotheses) != len(references):
        raise MetricError("one reference set per hypothesis required")
    hyps = [tokenizer(h) for h in hypotheses]
    refs = []
    for i, rs in enumerate(references):
        if isinstance(rs, str) or not rs:
            raise MetricError(f"hypothesis {i} needs a non-empty list of references")
        refs.append([tokenizer(r) for r in rs])
    return hyps, refs


def ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


# --------------------------------------------------------------------------
# BLEU


def bleu_stats(hypotheses, references, max_n: int = 4, tokenizer: Tokenizer = tokenize) -> dict:
    """Clipped n-gram matches, totals and lengths summed over the corpus."""
    hyps, refs = _prepare(hypotheses, references, tokenizer)
    matches = [0] * max_n
    totals = [0] * max_n
    hyp_len = ref_len = 0
    for h, rs in zip(hyps, refs):
        hyp_len += len(h)
        # closest reference length, shorter wins ties
        ref_len += min((abs(len(r) - len(h)), len(r)) for r in rs)[1]
        for n in range(1, max_n + 1):
            hc = ngrams(h, n)
            max_ref: Counter = Counter()
            for r in rs:
                max_ref |= ngrams(r, n)
            matches[n - 1] += sum(min(c, max_ref[g]) for g, c in hc.items())
            totals[n - 1] += max(len(h) - n + 1, 0)
    return {"matches": matches, "totals": totals, "hyp_len": hyp_len, "ref_len": ref_len}


def bleu_from_stats(stats: dict, max_n: int) -> float:
    m, t = stats["matches"][:max_n], stats["totals"][:max_n]
    if any(x == 0 for x in m) or any(x == 0 for x in t):
        return 0.0
    log_p = sum(math.log(a / b) for a, b in zip(m, t)) / max_n
    c, r = stats["hyp_len"], stats["ref_len"]
    bp = 1.0 if c >= r else math.exp(1.0 - r / c)
    return bp * math.exp(log_p)


def bleu(hypotheses, references, max_n: int = 4, tokenizer: Tokenizer = tokenize) -> float:
    """Corpus BLEU-``max_n`` with uniform weights and brevity penalty, no smoothing."""
    if not 1 <= max_n <= 4:
        raise MetricError("max_n must be 1..4")
    return bleu_from_stats(bleu_stats(hypotheses, references, max_n, tokenizer), max_n)


# --------------------------------------------------------------------------
# ROUGE-L


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l_pair(hyp: Sequence[str], ref: Sequence[str], beta2: float = 8.0) -> float:
    lcs = lcs_length(hyp, ref)
    if lcs == 0:
        return 0.0
    p, r = lcs / len(hyp), lcs / len(ref)
    return (1 + beta2) * p * r / (r + beta2 * p)


def rouge_l(hypotheses, references, beta2: float = 8.0, tokenizer: Tokenizer = tokenize) -> float:
    """Mean over images of the best-reference LCS F-measure."""
    hyps, refs = _prepare(hypotheses, references, tokenizer)
    scores = [max(rouge_l_pair(h, r, beta2) for r in rs) for h, rs in zip(hyps, refs)]
    return sum(scores) / len(scores)


# --------------------------------------------------------------------------
# CIDEr-D


def cider_d_scores(
    hypotheses,
    references,
    n: int = 4,
    sigma: float = 6.0,
    tokenizer: Tokenizer = tokenize,
) -> list[float]:
    hyps, refs = _prepare(hypotheses, references, tokenizer)
    if len(hyps) < 2:
        raise MetricError("IDF undefined")

    def counts(tokens):
        c: Counter = Counter()
        for k in range(1, n + 1):
            c.update(ngrams(tokens, k))
        return c

    ref_counts = [[counts(r) for r in rs] for rs in refs]
    df: Counter = Counter()
    for rcs in ref_counts:
        df.update(set().union(*(rc.keys() for rc in rcs)))
    log_docs = math.log(len(refs))

    def vectorize(c: Counter, length: int):
        vec = [dict() for _ in range(n)]
        norm = [0.0] * n
        for g, tf in c.items():
            w = tf * (log_docs - math.log(max(1.0, df[g])))
            vec[len(g) - 1][g] = w
            norm[len(g) - 1] += w * w
        return vec, [math.sqrt(x) for x in norm], length

    out = []
    for h, rs, rcs in zip(hyps, refs, ref_counts):
        vh, nh, lh = vectorize(counts(h), len(h))
        total = [0.0] * n
        for r, rc in zip(rs, rcs):
            vr, nr, lr = vectorize(rc, len(r))
            penalty = math.exp(-((lh - lr) ** 2) / (2 * sigma**2))
            for k in range(n):
                val = sum(min(w, vr[k].get(g, 0.0)) * vr[k].get(g, 0.0) for g, w in vh[k].items())
                if nh[k] != 0 and nr[k] != 0:
                    val /= nh[k] * nr[k]
                total[k] += val * penalty
        out.append(10.0 * (sum(total) / n) / len(rs))
    return out


def cider_d(hypotheses, references, n: int = 4, sigma: float = 6.0, tokenizer: Tokenizer = tokenize) -> float:
    """CIDEr-D: clipped TF-IDF n-gram cosine with a Gaussian length penalty, x10.

    Document frequencies come from the reference corpus, so at least two
    images are required.
    """
    scores = cider_d_scores(hypotheses, references, n, sigma, tokenizer)
    return sum(scores) / len(scores)


# --------------------------------------------------------------------------
# METEOR-lite


@lru_cache(maxsize=1)
def _stemmer():
    from nltk.stem.porter import PorterStemmer

    return PorterStemmer()


@lru_cache(maxsize=65536)
def stem(word: str) -> str:
    return _stemmer().stem(word)


def align(hyp: Sequence[str], ref: Sequence[str]) -> list[tuple[int, int]]:
    """Exact-match then stem-match unigram alignment, one-to-one.

    Each stage walks the hypothesis left to right; a token prefers the free
    reference position right after its predecessor's match, else the first
    free matching position.
    """
    pairs: dict[int, int] = {}
    used: set[int] = set()
    for key in (lambda w: w, stem):
        hk = [key(w) for w in hyp]
        rk = [key(w) for w in ref]
        for i, token in enumerate(hk):
            if i in pairs:
                continue
            prev = pairs.get(i - 1)
            if prev is not None and prev + 1 < len(ref) and prev + 1 not in used and rk[prev + 1] == token:
                j = prev + 1
            else:
                j = next((j for j, t in enumerate(rk) if t == token and j not in used), None)
            if j is not None:
                pairs[i] = j
                used.add(j)
    return sorted(pairs.items())


def count_chunks(alignment: Sequence[tuple[int, int]]) -> int:
    chunks = 0
    prev = None
    for i, j in alignment:
        if prev is None or i != prev[0] + 1 or j != prev[1] + 1:
            chunks += 1
        prev = (i, j)
    return chunks


def meteor_pair(hyp: Sequence[str], ref: Sequence[str], alpha: float = 0.9, gamma: float = 0.5, beta: float = 3.0) -> float:
    alignment = align(hyp, ref)
    m = len(alignment)
    if m == 0:
        return 0.0
    p, r = m / len(hyp), m / len(ref)
    fmean = p if p == r else p * r / (alpha * p + (1 - alpha) * r)
    if list(hyp) == list(ref):
        # identical token sequences are unfragmented by definition
        return fmean
    penalty = gamma * (count_chunks(alignment) / m) ** beta
    return fmean * (1 - penalty)


def meteor_lite(hypotheses, references, tokenizer: Tokenizer = tokenize) -> float:
    """Simplified METEOR: no synonyms, best reference per image, corpus mean."""
    hyps, refs = _prepare(hypotheses, references, tokenizer)
    scores = [max(meteor_pair(h, r) for r in rs) for h, rs in zip(hyps, refs)]
    return sum(scores) / len(scores)


def all_metrics(hypotheses, references, tokenizer: Tokenizer = tokenize) -> dict[str, float]:
    out = {f"BLEU-{n}": bleu(hypotheses, references, n, tokenizer) for n in range(1, 5)}
    out["METEOR-lite"] = meteor_lite(hypotheses, references, tokenizer)
    out["ROUGE-L"] = rouge_l(hypotheses, references, tokenizer=tokenizer)
    if len(hypotheses) >= 2:
        out["CIDEr-D"] = cider_d(hypotheses, references, tokenizer=tokenizer)
    return out
