"""ANLS and Rouge-L."""
from __future__ import annotations

import unicodedata
from typing import Sequence

ANLS_THRESHOLD = 0.5


def levenshtein(a: str, b: str) -> int:
    """Unit-cost edit distance, two-row DP."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def _norm(s: str) -> str:
    return s.strip().casefold()


def normalized_levenshtein(a: str, b: str) -> float:
    a, b = _norm(a), _norm(b)
    longest = max(len(a), len(b))
    if longest == 0:
        return 0.0
    return levenshtein(a, b) / longest


def anls(prediction: str, golds: Sequence[str], tau: float = ANLS_THRESHOLD) -> float:
    """Best similarity over the gold answers; similarity is zeroed at NL >= tau."""
    if not golds:
        raise ValueError("anls needs at least one gold answer")
    best = 0.0
    for gold in golds:
        nl = normalized_levenshtein(prediction, gold)
        best = max(best, 1.0 - nl if nl < tau else 0.0)
    return best


def _strip_punct(token: str) -> str:
    i, j = 0, len(token)
    while i < j and unicodedata.category(token[i]).startswith("P"):
        i += 1
    while j > i and unicodedata.category(token[j - 1]).startswith("P"):
        j -= 1
    return token[i:j]


def rouge_tokens(text: str) -> list[str]:
    return [t for t in (_strip_punct(w) for w in text.casefold().split()) if t]


def lcs_length(x: Sequence, y: Sequence) -> int:
    if not x or not y:
        return 0
    prev = [0] * (len(y) + 1)
    for xi in x:
        cur = [0]
        for j, yj in enumerate(y, 1):
            cur.append(prev[j - 1] + 1 if xi == yj else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(prediction: str, gold: str) -> float:
    """LCS F1 over casefolded, edge-punctuation-stripped whitespace tokens."""
    p, g = rouge_tokens(prediction), rouge_tokens(gold)
    lcs = lcs_length(p, g)
    if lcs == 0:
        return 0.0
    precision, recall = lcs / len(p), lcs / len(g)
    return 2 * precision * recall / (precision + recall)


def rouge_l_multi(prediction: str, golds: Sequence[str]) -> float:
    if not golds:
        raise ValueError("rouge_l needs at least one gold answer")
    return max(rouge_l(prediction, g) for g in golds)
