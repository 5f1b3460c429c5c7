"""Token counting for retrieval-context accounting.

Two counters ship by default:

* ``whitespace`` — approximate, zero assets, the default everywhere.
* a byte-pair counter compatible with published ``.tiktoken`` vocabulary
  files (base64 token + rank per line). It is registered under the name
  passed to :func:`register_bpe_vocabulary`, so exact counts are
  available whenever the vocabulary file is supplied. Reports always
  name the tokenizer that produced their numbers.
"""

from __future__ import annotations

import base64
import threading
from pathlib import Path
from typing import Callable

import regex

from ..errors import UnknownTokenizerError

# GPT-4-family pre-tokenizer split pattern
DEFAULT_SPLIT_PATTERN = (
    r"""'(?i:[sdmt]|ll|ve|re)|[^\r\n\p{L}\p{N}]?+\p{L}+|\p{N}{1,3}"""
    r"""| ?[^\s\p{L}\p{N}]++[\r\n]*|\s*[\r\n]|\s+(?!\S)|\s+"""
)


class BpeTokenCounter:
    """Counts tokens by running byte-pair merges against a rank table."""

    def __init__(self, ranks: dict[bytes, int], split_pattern: str = DEFAULT_SPLIT_PATTERN):
        self.ranks = ranks
        self._pattern = regex.compile(split_pattern)

    @classmethod
    def from_vocabulary_file(cls, path: str | Path,
                             split_pattern: str = DEFAULT_SPLIT_PATTERN) -> "BpeTokenCounter":
        ranks: dict[bytes, int] = {}
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            token_b64, rank = line.split()
            ranks[base64.b64decode(token_b64)] = int(rank)
        return cls(ranks, split_pattern)

    def count(self, text: str) -> int:
        total = 0
        for piece in self._pattern.findall(text):
            total += self._count_piece(piece.encode("utf-8"))
        return total

    def _count_piece(self, piece: bytes) -> int:
        if piece in self.ranks:
            return 1
        parts = [piece[i : i + 1] for i in range(len(piece))]
        while len(parts) > 1:
            best_rank = None
            best_i = -1
            for i in range(len(parts) - 1):
                rank = self.ranks.get(parts[i] + parts[i + 1])
                if rank is not None and (best_rank is None or rank < best_rank):
                    best_rank = rank
                    best_i = i
            if best_rank is None:
                break
            parts[best_i : best_i + 2] = [parts[best_i] + parts[best_i + 1]]
        return len(parts)


def _whitespace_count(text: str) -> int:
    return len(text.split())


_registry: dict[str, Callable[[str], int]] = {"whitespace": _whitespace_count}
_registry_lock = threading.Lock()


def register_tokenizer(tokenizer_id: str, counter: Callable[[str], int]) -> None:
    with _registry_lock:
        _registry[tokenizer_id] = counter


def register_bpe_vocabulary(tokenizer_id: str, vocabulary_path: str | Path) -> None:
    register_tokenizer(
        tokenizer_id, BpeTokenCounter.from_vocabulary_file(vocabulary_path).count
    )


def count_tokens(text: str, tokenizer: str = "whitespace") -> int:
    with _registry_lock:
        counter = _registry.get(tokenizer)
    if counter is None:
        raise UnknownTokenizerError(
            f"no tokenizer registered under {tokenizer!r}; "
            f"known: {sorted(_registry)}"
        )
    return counter(text)


def known_tokenizers() -> list[str]:
    with _registry_lock:
        return sorted(_registry)
