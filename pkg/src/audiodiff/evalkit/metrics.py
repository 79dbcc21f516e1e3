"""Corpus-level BLEU-n, ROUGE-L and CIDEr-D over whitespace-tokenised captions.

Candidates and references may be strings or token lists; <bos>/<eos>/<pad>
markers are stripped before scoring. Every reference list may hold several
captions.
"""
from __future__ import annotations

import math
from collections import Counter
from typing import Sequence

SPECIALS = frozenset({"<bos>", "<eos>", "<pad>"})


def _tokens(text) -> list[str]:
    words = text.split() if isinstance(text, str) else list(text)
    return [w for w in words if w not in SPECIALS]


def _prepare(candidates, reference_lists) -> tuple[list[list[str]], list[list[list[str]]]]:
    if len(candidates) != len(reference_lists):
        raise ValueError(f"{len(candidates)} candidates but {len(reference_lists)} reference lists")
    if not candidates:
        raise ValueError("empty corpus")
    cands = [_tokens(c) for c in candidates]
    refs = []
    for rl in reference_lists:
        if isinstance(rl, str):
            rl = [rl]
        if not rl:
            raise ValueError("every item needs at least one reference")
        refs.append([_tokens(r) for r in rl])
    return cands, refs


def ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu_n(candidates, reference_lists, n: int = 4) -> float:
    """Corpus BLEU with clipped counts, uniform weights over orders 1..n, no smoothing."""
    if n not in (1, 2, 3, 4):
        raise ValueError("n must be in 1..4")
    cands, refs = _prepare(candidates, reference_lists)
    matched = [0] * n
    total = [0] * n
    c_len = r_len = 0
    for cand, rl in zip(cands, refs):
        c_len += len(cand)
        # closest reference length, shorter wins ties
        r_len += min((abs(len(r) - len(cand)), len(r)) for r in rl)[1]
        for k in range(1, n + 1):
            cg = ngrams(cand, k)
            max_ref: Counter = Counter()
            for r in rl:
                max_ref |= ngrams(r, k)
            matched[k - 1] += sum(min(c, max_ref[g]) for g, c in cg.items())
            total[k - 1] += max(len(cand) - k + 1, 0)
    if c_len == 0 or any(m == 0 for m in matched):
        return 0.0
    log_p = sum(math.log(m / t) for m, t in zip(matched, total)) / n
    bp = math.exp(min(0.0, 1.0 - r_len / c_len))
    return bp * math.exp(log_p)


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l_item(cand: Sequence[str], refs: Sequence[Sequence[str]], beta: float = 1.2) -> float:
    best = 0.0
    for r in refs:
        lcs = lcs_length(cand, r)
        if lcs == 0:
            continue
        p, rec = lcs / len(cand), lcs / len(r)
        best = max(best, (1 + beta**2) * p * rec / (rec + beta**2 * p))
    return best


def rouge_l(candidates, reference_lists, beta: float = 1.2) -> float:
    cands, refs = _prepare(candidates, reference_lists)
    return sum(rouge_l_item(c, rl, beta) for c, rl in zip(cands, refs)) / len(cands)


def _cider_vectors(tokens, df, log_n, n_max):
    vec = [dict() for _ in range(n_max)]
    norm = [0.0] * n_max
    for k in range(1, n_max + 1):
        for g, tf in ngrams(tokens, k).items():
            w = tf * (log_n - math.log(max(1.0, df.get(g, 0.0))))
            vec[k - 1][g] = w
            norm[k - 1] += w * w
    return vec, [math.sqrt(x) for x in norm]


def cider_d_items(candidates, reference_lists, n: int = 4, sigma: float = 6.0) -> list[float]:
    """Per-item CIDEr-D scores (already multiplied by 10)."""
    cands, refs = _prepare(candidates, reference_lists)
    if len(cands) < 2:
        raise ValueError("CIDEr-D needs at least 2 items for document frequencies")
    df: Counter = Counter()
    for rl in refs:
        seen = set()
        for r in rl:
            for k in range(1, n + 1):
                seen.update(ngrams(r, k))
        df.update(seen)
    log_n = math.log(float(len(refs)))
    scores = []
    for cand, rl in zip(cands, refs):
        vc, nc = _cider_vectors(cand, df, log_n, n)
        acc = [0.0] * n
        for r in rl:
            vr, nr = _cider_vectors(r, df, log_n, n)
            delta = len(cand) - len(r)
            for k in range(n):
                val = sum(min(w, vr[k][g]) * vr[k][g] for g, w in vc[k].items() if g in vr[k])
                if nc[k] != 0 and nr[k] != 0:
                    val /= nc[k] * nr[k]
                acc[k] += val * math.exp(-(delta**2) / (2 * sigma**2))
        scores.append(10.0 * sum(acc) / n / len(rl))
    return scores


def cider_d(candidates, reference_lists, n: int = 4, sigma: float = 6.0) -> float:
    items = cider_d_items(candidates, reference_lists, n, sigma)
    return sum(items) / len(items)


def token_accuracy(candidate, reference) -> float:
    """Position-wise word agreement divided by the longer length."""
    c, r = _tokens(candidate), _tokens(reference)
    if not c and not r:
        return 1.0
    return sum(a == b for a, b in zip(c, r)) / max(len(c), len(r))


def mentions(caption, phrase: str) -> bool:
    """True when ``phrase`` occurs as a contiguous word sequence in ``caption``."""
    words, target = _tokens(caption), phrase.split()
    k = len(target)
    return any(words[i : i + k] == target for i in range(len(words) - k + 1))
