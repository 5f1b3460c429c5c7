"""Lexical answer scoring: token-level F1 and unigram BLEU.

Both scores share one normalization: lowercase, remove punctuation,
collapse whitespace. They are pure functions of the two strings.
"""

from __future__ import annotations

import math
import re
from collections import Counter

_PUNCT_RE = re.compile(r"[^\w\s]")


def normalize_tokens(text: str) -> list[str]:
    text = _PUNCT_RE.sub("", text.lower())
    return text.split()


def score_f1(gold: str, generated: str) -> float:
    """F1 over normalized token multisets."""
    gold_tokens = normalize_tokens(gold)
    gen_tokens = normalize_tokens(generated)
    if not gold_tokens and not gen_tokens:
        return 1.0
    if not gold_tokens or not gen_tokens:
        return 0.0
    overlap = sum((Counter(gold_tokens) & Counter(gen_tokens)).values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(gen_tokens)
    recall = overlap / len(gold_tokens)
    return 2 * precision * recall / (precision + recall)


def score_bleu1(gold: str, generated: str) -> float:
    """Unigram precision with the standard brevity penalty."""
    gold_tokens = normalize_tokens(gold)
    gen_tokens = normalize_tokens(generated)
    if not gold_tokens and not gen_tokens:
        return 1.0
    if not gen_tokens:
        return 0.0
    overlap = sum((Counter(gold_tokens) & Counter(gen_tokens)).values())
    precision = overlap / len(gen_tokens)
    c, r = len(gen_tokens), len(gold_tokens)
    brevity = 1.0 if c >= r else math.exp(1 - r / c)
    return brevity * precision
