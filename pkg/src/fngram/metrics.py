"""ROUGE-N, ROUGE-L, BLEU and Distinct-n over token lists (single reference)."""

from __future__ import annotations

import math
import warnings
from collections import Counter
from typing import Sequence

Tokens = Sequence[str]


class MetricWarning(UserWarning):
    """Raised (as a warning) when a metric is undefined and reported as 0."""


def ngrams(tokens: Tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _f1(overlap: int, cand_total: int, ref_total: int) -> float:
    if overlap == 0:
        return 0.0
    p = overlap / cand_total
    r = overlap / ref_total
    return 2 * p * r / (p + r)


def rouge_n(candidate: Tokens, reference: Tokens, n: int = 1) -> float:
    if n < 1:
        raise ValueError("n must be >= 1")
    if not reference:
        warnings.warn("empty reference; ROUGE defined as 0", MetricWarning, stacklevel=2)
        return 0.0
    cand, ref = ngrams(candidate, n), ngrams(reference, n)
    overlap = sum((cand & ref).values())
    return _f1(overlap, sum(cand.values()), sum(ref.values()))


def lcs_length(a: Tokens, b: Tokens) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: Tokens, reference: Tokens) -> float:
    if not reference:
        warnings.warn("empty reference; ROUGE defined as 0", MetricWarning, stacklevel=2)
        return 0.0
    return _f1(lcs_length(candidate, reference), len(candidate), len(reference))


def brevity_penalty(cand_len: int, ref_len: int) -> float:
    if cand_len == 0:
        return 0.0
    if cand_len > ref_len:
        return 1.0
    return math.exp(1.0 - ref_len / cand_len)


def _clipped_counts(candidate: Tokens, reference: Tokens, n: int) -> tuple[int, int]:
    cand = ngrams(candidate, n)
    return sum((cand & ngrams(reference, n)).values()), sum(cand.values())


def sentence_bleu_smoothed(candidate: Tokens, reference: Tokens, max_n: int = 4) -> float:
    """Add-one smoothing on numerator and denominator of every n-gram precision."""
    log_p = 0.0
    for n in range(1, max_n + 1):
        match, total = _clipped_counts(candidate, reference, n)
        log_p += math.log((match + 1) / (total + 1))
    bp = brevity_penalty(len(candidate), len(reference))
    return bp * math.exp(log_p / max_n) if bp else 0.0


def bleu(candidates: Sequence[Tokens], references: Sequence[Tokens], max_n: int = 4,
         smoothed: bool = False) -> float:
    """Corpus BLEU, or the mean of add-one smoothed sentence BLEU when ``smoothed``."""
    if len(candidates) != len(references):
        raise ValueError(f"{len(candidates)} candidates but {len(references)} references")
    if max_n < 1:
        raise ValueError("max_n must be >= 1")
    if not candidates:
        return 0.0
    if smoothed:
        return sum(sentence_bleu_smoothed(c, r, max_n) for c, r in zip(candidates, references)) / len(candidates)
    matches = [0] * max_n
    totals = [0] * max_n
    for c, r in zip(candidates, references):
        for n in range(1, max_n + 1):
            m, t = _clipped_counts(c, r, n)
            matches[n - 1] += m
            totals[n - 1] += t
    if any(m == 0 for m in matches):
        return 0.0
    log_p = sum(math.log(m / t) for m, t in zip(matches, totals)) / max_n
    c_len = sum(len(c) for c in candidates)
    r_len = sum(len(r) for r in references)
    return brevity_penalty(c_len, r_len) * math.exp(log_p)


def distinct_n(candidates: Sequence[Tokens], n: int = 1) -> float:
    if n < 1:
        raise ValueError("n must be >= 1")
    grams: Counter = Counter()
    for c in candidates:
        grams.update(ngrams(c, n))
    total = sum(grams.values())
    if total == 0:
        warnings.warn(f"no {n}-grams in candidates; Distinct-{n} defined as 0", MetricWarning, stacklevel=2)
        return 0.0
    return len(grams) / total


def score_corpus(candidates: Sequence[Tokens], references: Sequence[Tokens]) -> dict[str, float]:
    """All report metrics; ROUGE values are means over sentence pairs."""
    if len(candidates) != len(references):
        raise ValueError(f"{len(candidates)} candidates but {len(references)} references")
    n = max(len(candidates), 1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", MetricWarning)
        scores = {
            "rouge-1": sum(rouge_n(c, r, 1) for c, r in zip(candidates, references)) / n,
            "rouge-2": sum(rouge_n(c, r, 2) for c, r in zip(candidates, references)) / n,
            "rouge-l": sum(rouge_l(c, r) for c, r in zip(candidates, references)) / n,
        }
        for k in range(1, 5):
            scores[f"bleu-{k}"] = bleu(candidates, references, k)
        scores["bleu-4-smoothed"] = bleu(candidates, references, 4, smoothed=True)
        scores["distinct-1"] = distinct_n(candidates, 1)
        scores["distinct-2"] = distinct_n(candidates, 2)
    return scores


def format_report(scores: dict[str, float], tokenization: str | None = None) -> str:
    lines = []
    if tokenization:
        lines.append(f"# tokenization: {tokenization}")
    lines.extend(f"{name}\t{value:.6f}" for name, value in scores.items())
    return "\n".join(lines) + "\n"
