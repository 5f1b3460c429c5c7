"""Chunked-retrieval comparison stub.

Splits raw conversation transcripts into fixed-size token windows and
retrieves whole chunks by embedding similarity. Exists purely as
comparison plumbing for the harness; it is not a tuned system and is
never graded.
"""

from __future__ import annotations

from ..index import IndexEntry, VectorIndex
from ..providers import Embedder
from .dataset import Conversation


class ChunkedRag:
    def __init__(self, embedder: Embedder, chunk_tokens: int = 256):
        self.embedder = embedder
        self.chunk_tokens = chunk_tokens
        self.index = VectorIndex(embedder.dimension)
        self.chunks: dict[str, str] = {}
        self._counter = 0

    def add_conversation(self, conversation: Conversation) -> None:
        words: list[str] = []
        for session in conversation.sessions:
            for message in session:
                words.extend(message.line().split())
        for start in range(0, len(words), self.chunk_tokens):
            chunk = " ".join(words[start : start + self.chunk_tokens])
            if not chunk:
                continue
            chunk_id = f"chunk-{self._counter:06d}"
            self._counter += 1
            self.chunks[chunk_id] = chunk
            self.index.upsert(
                IndexEntry(
                    id=chunk_id,
                    vector=self.embedder.embed([chunk])[0],
                    namespace=conversation.id,
                )
            )

    def search(self, query: str, k: int, conversation_id: str) -> list[str]:
        hits = self.index.top_k(self.embedder.embed([query])[0], k, conversation_id)
        return [self.chunks[h.id] for h in hits]
