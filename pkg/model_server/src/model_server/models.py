"""Small locally hosted expert models.

These are honest statistical stand-ins sized for desk-scale runs: a bigram
language model with nucleus sampling for generator roles, a keyword softmax
scorer for classifier roles, and a hashed character n-gram embedder. Any
per-request randomness derives from (request seed, prompt, candidate index),
so concurrent requests stay deterministic.
"""

from __future__ import annotations

import hashlib
import math
import random
from collections import Counter, defaultdict

from .tokenizer import WordTokenizer

# Default separator vocabulary matching the task templates.
DEFAULT_SPECIAL_TOKENS = [
    "<|NRM|>",
    "<|SIT|>",
    "<|INT|>",
    "<|ACT|>",
    "<|M_ACT|>",
    "<|I_ACT|>",
    "<|CSQ|>",
    "<|M_CSQ|>",
    "<|I_CSQ|>",
    "<|CSQ_PL|>",
    "<|CSQ_IMPL|>",
]

# Built-in training stream for the default generator: everyday-scenario prose
# with enough repetition to give the bigram table some structure.
DEFAULT_TRAIN_TEXT = """
sam wants to help a neighbor and sam offers to carry the heavy bags home
the neighbor thanks sam and the street feels friendly after the kind act
ana waits in line at the store and ana pays for the bread with a smile
the clerk thanks ana and the store stays calm while people wait in line
lee borrows a ladder and lee returns the ladder clean the next morning
the owner trusts lee and lends the ladder again when lee asks politely
maya walks the dog on a leash and the dog stays safe near the busy road
a driver waves at maya and the walk ends well for the dog and for maya
noah shares his notes with a classmate and the classmate passes the exam
the classmate thanks noah and shares snacks with noah during the break
"""


def _stable_rng(*parts) -> random.Random:
    digest = hashlib.sha256("|".join(str(p) for p in parts).encode("utf-8")).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


class NgramGenerator:
    """Word bigram language model decoded with nucleus sampling.

    Decoding starts from the final input token (falling back to the overall
    unigram distribution when that token is unknown) and always emits
    ``max_new_tokens`` words. Nucleus sampling keeps the smallest
    highest-probability token set whose cumulative mass reaches ``top_p``,
    renormalizes, and samples from it.
    """

    def __init__(self, train_text: str = DEFAULT_TRAIN_TEXT, special_tokens=None):
        self.tokenizer = WordTokenizer()
        self.tokenizer.add_special_tokens(list(special_tokens or DEFAULT_SPECIAL_TOKENS))
        stream = train_text.split()
        if not stream:
            raise ValueError("generator needs non-empty training text")
        for token in stream:
            self.tokenizer._token_id(token)
        self.unigrams = Counter(stream)
        self.bigrams: dict[str, Counter] = defaultdict(Counter)
        for left, right in zip(stream, stream[1:]):
            self.bigrams[left][right] += 1

    def add_special_tokens(self, tokens: list[str]) -> int:
        return self.tokenizer.add_special_tokens(tokens)

    def _distribution(self, context: str) -> list[tuple[str, float]]:
        counts = self.bigrams.get(context) or self.unigrams
        total = sum(counts.values())
        # deterministic order: probability descending, then lexicographic
        return sorted(
            ((token, count / total) for token, count in counts.items()),
            key=lambda item: (-item[1], item[0]),
        )

    def _sample_next(self, context: str, top_p: float, rng: random.Random) -> str:
        ranked = self._distribution(context)
        nucleus = []
        mass = 0.0
        for token, p in ranked:
            nucleus.append((token, p))
            mass += p
            if mass >= top_p:
                break
        pick = rng.random() * mass
        rolling = 0.0
        for token, p in nucleus:
            rolling += p
            if pick <= rolling:
                return token
        return nucleus[-1][0]

    def generate(
        self, prompt: str, n: int, top_p: float, max_new_tokens: int, seed: int
    ) -> list[str]:
        tokens = self.tokenizer.tokenize(prompt)
        start = tokens[-1] if tokens else ""
        candidates = []
        for index in range(n):
            rng = _stable_rng("ngram-gen", seed, index, prompt)
            context = start
            out: list[str] = []
            for _ in range(max_new_tokens):
                context = self._sample_next(context, top_p, rng)
                out.append(context)
            candidates.append(self.tokenizer.detokenize(out))
        return candidates


class KeywordClassifier:
    """Softmax over per-label keyword-occurrence scores.

    The response distribution is ordered exactly as the request's labels.
    Labels without configured keywords score zero, which still yields a
    proper distribution after the softmax.
    """

    def __init__(self, keywords: dict[str, list[str]], temperature: float = 1.0):
        self.keywords = {label: list(words) for label, words in keywords.items()}
        if temperature <= 0:
            raise ValueError("temperature must be positive")
        self.temperature = temperature

    def classify(self, text: str, labels: list[str]) -> dict[str, float]:
        lowered = text.lower()
        scores = []
        for label in labels:
            words = self.keywords.get(label, [])
            scores.append(float(sum(lowered.count(w.lower()) for w in words)))
        peak = max(scores)
        exps = [math.exp((s - peak) / self.temperature) for s in scores]
        total = sum(exps)
        return {label: value / total for label, value in zip(labels, exps)}


class HashEmbedder:
    """Histogram of hashed character n-grams (n = 1..3); one fixed dimension."""

    def __init__(self, dim: int = 64, seed: int = 0):
        if dim <= 0:
            raise ValueError("dim must be positive")
        self.dim = dim
        self.seed = seed

    def _bucket(self, ngram: str) -> int:
        value = 0
        for byte in ngram.encode("utf-8"):
            value = value * 31 + byte
        return (value + self.seed) % self.dim

    def embed(self, texts: list[str]) -> list[list[float]]:
        vectors = []
        for text in texts:
            vector = [0.0] * self.dim
            for n in (1, 2, 3):
                for start in range(len(text) - n + 1):
                    vector[self._bucket(text[start : start + n])] += 1.0
            vectors.append(vector)
        return vectors
