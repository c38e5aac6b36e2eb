"""Word-level tokenizer with atomic special tokens.

Special separator tokens (``<|...|>``) are registered as single vocabulary
entries: the tokenizer never splits inside them, and re-adding an existing
token is a no-op. Plain text is split on whitespace. Detokenization joins
with single spaces, so any single-space-joined template string round-trips
exactly.
"""

from __future__ import annotations

import re


class WordTokenizer:
    def __init__(self):
        self.vocab: dict[str, int] = {}
        self.special_tokens: list[str] = []
        self._splitter: re.Pattern | None = None

    def _token_id(self, token: str) -> int:
        if token not in self.vocab:
            self.vocab[token] = len(self.vocab)
        return self.vocab[token]

    def add_special_tokens(self, tokens: list[str]) -> int:
        """Register each token as one vocabulary entry; returns how many were
        actually new."""
        added = 0
        for token in tokens:
            if token in self.special_tokens:
                continue
            self.special_tokens.append(token)
            self._token_id(token)
            added += 1
        if added:
            # longest-first alternation so overlapping specials split correctly
            pattern = "|".join(
                re.escape(t) for t in sorted(self.special_tokens, key=len, reverse=True)
            )
            self._splitter = re.compile(f"({pattern})")
        return added

    def tokenize(self, text: str) -> list[str]:
        pieces = self._splitter.split(text) if self._splitter else [text]
        tokens: list[str] = []
        for piece in pieces:
            if piece in self.special_tokens:
                tokens.append(piece)
            else:
                tokens.extend(piece.split())
        return tokens

    def encode(self, text: str) -> list[int]:
        return [self._token_id(t) for t in self.tokenize(text)]

    def detokenize(self, tokens: list[str]) -> str:
        return " ".join(tokens)
