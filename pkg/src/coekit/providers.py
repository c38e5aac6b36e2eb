"""Expert provider interfaces: HTTP clients for generator, classifier, and
embedding services plus deterministic mock and oracle backends for
desk-scale verification.

Wire protocol (JSON bodies, UTF-8):

    POST {url}/generate  {prompt, n, top_p, max_new_tokens, seed} -> {candidates: [{text}]}
    POST {url}/classify  {text, labels: [..]}                     -> {probs: {label: p}}
    POST {url}/embed     {texts: [..]}                            -> {vectors: [[..]]}

Non-2xx responses carry ``{error: message}``. Mock backends are addressed
through URL schemes (``mock:echo``, ``mock:embed?dim=64&seed=7``,
``oracle:gen?rate=0.5&seed=11``, ``oracle:cls?accuracy=0.9&seed=3``) and are
pure functions of their inputs and seeds, so results never depend on call
order or thread count.
"""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass, field
from functools import lru_cache
from urllib.parse import parse_qs, urlsplit

import numpy as np
import requests

from .corpus import Story
from . import tasks

PROB_TOLERANCE = 1e-6

GENERATOR_ROLES = (
    "action_gen_context",
    "action_gen_context_conseq",
    "conseq_gen_context_action",
    "conseq_refiner",
    "norm_gen_full",
)

# classifier role -> label set, first label is the "positive" reading
CLASSIFIER_LABELS = {
    "action_cls_context": ("moral", "immoral"),
    "action_cls_context_conseq": ("moral", "immoral"),
    "conseq_cls_context_action": ("plausible", "implausible"),
}

EMBEDDER_ROLE = "embedder"

# Oracle-world sentinels: present in synthetic stories and read exactly by
# the oracle classifier, so chain behavior can be verified without models.
GOOD_SENTINEL = "@GOOD@"
BAD_SENTINEL = "@BAD@"
PLAUSIBLE_SENTINEL = "@PLAUSIBLE@"
NORM_SENTINEL = "@NORM@"
OFF_SENTINEL = "@OFF@"


class ProviderError(Exception):
    """Transport failures, backend error payloads, and contract violations."""


@dataclass(frozen=True)
class DecodeParams:
    n: int = 10
    top_p: float = 0.9
    max_new_tokens: int = 60
    seed: int = 0


@dataclass
class Candidate:
    text: str
    gen_index: int
    score: float | None = None


@dataclass(frozen=True)
class ClassDistribution:
    probs: dict[str, float]

    def __post_init__(self):
        total = sum(self.probs.values())
        if abs(total - 1.0) > PROB_TOLERANCE:
            raise ProviderError(f"malformed distribution: probabilities sum to {total}")


@dataclass(frozen=True)
class ProviderEndpoint:
    role: str
    url: str
    decode: DecodeParams = field(default_factory=DecodeParams)


def _stable_rng(*parts) -> random.Random:
    """RNG seeded from a sha256 over the given parts; the derivation is
    ``sha256("|".join(str(part)))`` truncated to 8 bytes, big-endian."""
    digest = hashlib.sha256("|".join(str(p) for p in parts).encode("utf-8")).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


# ---------------------------------------------------------------------------
# Backends


class HttpBackend:
    """Client for one served expert. No retries: a request either succeeds or
    surfaces an error, so a fixed seed can never yield a silently different
    sample."""

    def __init__(self, url: str, timeout: float = 60.0):
        self.url = url.rstrip("/")
        self.timeout = timeout
        self._session = requests.Session()

    def _post(self, route: str, payload: dict) -> dict:
        try:
            response = self._session.post(
                f"{self.url}{route}", json=payload, timeout=self.timeout
            )
        except requests.RequestException as exc:
            raise ProviderError(f"transport failure calling {self.url}{route}: {exc}") from exc
        if response.status_code // 100 != 2:
            try:
                message = response.json().get("error", response.text)
            except ValueError:
                message = response.text
            raise ProviderError(f"backend error from {self.url}{route}: {message}")
        try:
            return response.json()
        except ValueError as exc:
            raise ProviderError(f"non-JSON response from {self.url}{route}") from exc

    def generate(self, prompt: str, decode: DecodeParams) -> list[str]:
        body = self._post(
            "/generate",
            {
                "prompt": prompt,
                "n": decode.n,
                "top_p": decode.top_p,
                "max_new_tokens": decode.max_new_tokens,
                "seed": decode.seed,
            },
        )
        try:
            return [c["text"] for c in body["candidates"]]
        except (KeyError, TypeError) as exc:
            raise ProviderError(f"malformed generate response: {body!r}") from exc

    def classify(self, text: str, labels: tuple[str, ...]) -> dict[str, float]:
        body = self._post("/classify", {"text": text, "labels": list(labels)})
        probs = body.get("probs")
        if not isinstance(probs, dict):
            raise ProviderError(f"malformed classify response: {body!r}")
        return {str(k): float(v) for k, v in probs.items()}

    def embed(self, texts: list[str]) -> list[list[float]]:
        body = self._post("/embed", {"texts": list(texts)})
        vectors = body.get("vectors")
        if not isinstance(vectors, list):
            raise ProviderError(f"malformed embed response: {body!r}")
        return vectors


class EchoGenerator:
    """Returns the prompt verbatim for every requested candidate."""

    def generate(self, prompt: str, decode: DecodeParams) -> list[str]:
        return [prompt] * decode.n


class OracleGenerator:
    """Seeded sentinel generator. Per candidate, with probability ``rate``
    the text carries the sentinel matching the prompt's final cue token
    (constraint satisfied), otherwise the off-target filler.

    The per-call RNG derives from ("oracle-gen", backend seed, decode seed,
    prompt), so output is a pure function of those values.
    """

    _CUE_SENTINELS = {
        tasks.M_ACT: GOOD_SENTINEL,
        tasks.I_ACT: BAD_SENTINEL,
        tasks.CSQ: PLAUSIBLE_SENTINEL,
        tasks.NRM: NORM_SENTINEL,
    }

    def __init__(self, rate: float = 1.0, seed: int = 0):
        self.rate = rate
        self.seed = seed

    def generate(self, prompt: str, decode: DecodeParams) -> list[str]:
        cue = prompt.rstrip().rsplit(" ", 1)[-1]
        sentinel = self._CUE_SENTINELS.get(cue)
        if sentinel is None:
            raise ProviderError(f"oracle generator got a prompt with unknown cue {cue!r}")
        rng = _stable_rng("oracle-gen", self.seed, decode.seed, prompt)
        return [
            f"option {i} {sentinel if rng.random() < self.rate else OFF_SENTINEL}"
            for i in range(decode.n)
        ]


class OracleClassifier:
    """Reads sentinels exactly: the positive label gets probability 1.0 iff
    its sentinel occurs in the text. With ``accuracy`` < 1 the distribution is
    flipped with probability 1 - accuracy, seeded per text."""

    _POSITIVE_SENTINELS = {"moral": GOOD_SENTINEL, "plausible": PLAUSIBLE_SENTINEL}

    def __init__(self, accuracy: float = 1.0, seed: int = 0):
        self.accuracy = accuracy
        self.seed = seed

    def classify(self, text: str, labels: tuple[str, ...]) -> dict[str, float]:
        positive = labels[0]
        sentinel = self._POSITIVE_SENTINELS.get(positive)
        if sentinel is None:
            raise ProviderError(f"oracle classifier got unknown label set {labels!r}")
        p_positive = 1.0 if sentinel in text else 0.0
        if self.accuracy < 1.0:
            rng = _stable_rng("oracle-cls", self.seed, text)
            if rng.random() >= self.accuracy:
                p_positive = 1.0 - p_positive
        return {labels[0]: p_positive, labels[1]: 1.0 - p_positive}


class MockHashEmbedder:
    """Deterministic text embedding: a histogram of hashed character n-grams
    (n = 1..3). Bucket index is ``(poly_hash(ngram) + seed) % dim`` with
    ``poly_hash(g) = sum(byte * 31^k)`` over the UTF-8 bytes, most significant
    first. Empty text embeds to the zero vector."""

    def __init__(self, dim: int = 64, seed: int = 0):
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


def _query_params(query: str) -> dict[str, str]:
    return {k: v[-1] for k, v in parse_qs(query).items()}


@lru_cache(maxsize=None)
def resolve_backend(url: str):
    """Map an endpoint URL to a backend object. ``http(s)`` URLs get a wire
    client; ``mock:``/``oracle:`` URLs get the deterministic local backends."""
    split = urlsplit(url)
    if split.scheme in ("http", "https"):
        return HttpBackend(url)
    params = _query_params(split.query)
    kind = split.path or split.netloc
    if split.scheme == "mock":
        if kind == "echo":
            return EchoGenerator()
        if kind == "embed":
            return MockHashEmbedder(
                dim=int(params.get("dim", 64)), seed=int(params.get("seed", 0))
            )
    if split.scheme == "oracle":
        if kind == "gen":
            return OracleGenerator(
                rate=float(params.get("rate", 1.0)), seed=int(params.get("seed", 0))
            )
        if kind == "cls":
            return OracleClassifier(
                accuracy=float(params.get("accuracy", 1.0)), seed=int(params.get("seed", 0))
            )
    raise ProviderError(f"unknown provider url {url!r}")


# ---------------------------------------------------------------------------
# Operations


def generate(
    endpoint: ProviderEndpoint, prompt: str, decode: DecodeParams | None = None
) -> list[Candidate]:
    """Draw exactly ``decode.n`` candidates from a generator endpoint."""
    if endpoint.role not in GENERATOR_ROLES:
        raise ProviderError(f"role {endpoint.role!r} is not a generator role")
    decode = decode if decode is not None else endpoint.decode
    try:
        texts = resolve_backend(endpoint.url).generate(prompt, decode)
    except ProviderError:
        raise
    except Exception as exc:
        raise ProviderError(f"generator {endpoint.role!r} failed: {exc}") from exc
    if len(texts) != decode.n:
        raise ProviderError(
            f"generator {endpoint.role!r} returned {len(texts)} candidates, expected {decode.n}"
        )
    return [Candidate(text=str(t), gen_index=i) for i, t in enumerate(texts)]


def classify(endpoint: ProviderEndpoint, input_text: str) -> ClassDistribution:
    """Classify one input; the label set is fixed by the endpoint role."""
    labels = CLASSIFIER_LABELS.get(endpoint.role)
    if labels is None:
        raise ProviderError(f"role {endpoint.role!r} is not a classifier role")
    try:
        probs = resolve_backend(endpoint.url).classify(input_text, labels)
    except ProviderError:
        raise
    except Exception as exc:
        raise ProviderError(f"classifier {endpoint.role!r} failed: {exc}") from exc
    if set(probs) != set(labels):
        raise ProviderError(
            f"classifier {endpoint.role!r} returned labels {sorted(probs)}, expected {sorted(labels)}"
        )
    return ClassDistribution(probs)


def embed(endpoint: ProviderEndpoint, texts: list[str]) -> list[np.ndarray]:
    """Embed a non-empty list of texts into vectors of one shared dimension."""
    if not texts:
        raise ProviderError("embed requires a non-empty text list")
    try:
        vectors = resolve_backend(endpoint.url).embed(texts)
    except ProviderError:
        raise
    except Exception as exc:
        raise ProviderError(f"embedder {endpoint.role!r} failed: {exc}") from exc
    if len(vectors) != len(texts):
        raise ProviderError(f"embedder returned {len(vectors)} vectors for {len(texts)} texts")
    arrays = [np.asarray(v, dtype=np.float64) for v in vectors]
    dims = {a.shape for a in arrays}
    if len(dims) != 1:
        raise ProviderError(f"ragged embedding dimensions: {sorted(dims)}")
    return arrays


class EndpointEmbedder:
    """Adapter giving an embedding endpoint the plain ``embed(texts)`` shape
    that the splitting module expects."""

    def __init__(self, endpoint: ProviderEndpoint):
        self.endpoint = endpoint

    def embed(self, texts: list[str]) -> list[np.ndarray]:
        return embed(self.endpoint, texts)


# ---------------------------------------------------------------------------
# Oracle world


def make_oracle_stories(count: int, seed: int = 0) -> list[Story]:
    """Synthetic stories whose moral actions carry the @GOOD@ sentinel,
    immoral actions @BAD@, and true consequences @PLAUSIBLE@. Norm texts vary
    with a seeded filler word so desk-scale corpora are not degenerate."""
    rng = _stable_rng("oracle-stories", seed)
    fillers = ["fair", "kind", "honest", "careful", "patient", "generous"]
    stories = []
    for i in range(count):
        filler = fillers[rng.randrange(len(fillers))]
        stories.append(
            Story(
                id=f"ow{i:05d}",
                norm=f"one should stay {filler} in matters like case {i}",
                situation=f"someone faces situation {i} with others nearby",
                intention=f"they want to settle matter {i}",
                moral_action=f"they settle matter {i} the right way {GOOD_SENTINEL}",
                moral_consequence=f"matter {i} ends well {PLAUSIBLE_SENTINEL}",
                immoral_action=f"they settle matter {i} the wrong way {BAD_SENTINEL}",
                immoral_consequence=f"matter {i} ends badly {PLAUSIBLE_SENTINEL}",
            )
        )
    return stories
