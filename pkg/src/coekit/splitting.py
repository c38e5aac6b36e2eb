"""Adversarial split strategies for branching-narrative corpora.

Three strategies are provided:

* norm distance (ND): embed norms, group them by agglomerative clustering,
  and send stories from the most isolated clusters to test/dev;
* lexical bias (LB): score stories by occurrences of class-skewed lemmas in
  their action (or consequence) pair and send the least biased to test;
* minimal pairs (MP): send stories whose moral/immoral targets are closest
  under normalized Damerau-Levenshtein distance to test.

All strategies are deterministic: ties break on story or cluster ids.
"""

from __future__ import annotations

import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .corpus import Story

PARTITIONS = ("train", "dev", "test")

TARGET_FIELDS = {
    "actions": ("moral_action", "immoral_action"),
    "consequences": ("moral_consequence", "immoral_consequence"),
}

# Defaults for full-scale corpora; desk-scale runs pass smaller values.
DEFAULT_CLUSTER_COUNT = 1000
DEFAULT_LEMMA_COUNT = 100

Lemmatizer = Callable[[str], list[str]]


class SplittingError(Exception):
    """Raised for invalid splitting inputs (bad k, zero vectors, empty partitions)."""


# ---------------------------------------------------------------------------
# Edit distance


def damerau_levenshtein(a: str, b: str) -> int:
    """Restricted (optimal string alignment) edit distance over characters.

    Both strings are lowercased first. Insertions, deletions, substitutions,
    and adjacent transpositions all cost 1; a substring may take part in at
    most one transposition.
    """
    a = a.lower()
    b = b.lower()
    if a == b:
        return 0
    la, lb = len(a), len(b)
    if la == 0:
        return lb
    if lb == 0:
        return la
    if la < lb:  # keep the inner loop over the shorter string
        a, b, la, lb = b, a, lb, la

    prev2 = [0] * (lb + 1)
    prev1 = list(range(lb + 1))
    cur = [0] * (lb + 1)
    for i in range(1, la + 1):
        cur[0] = i
        ca = a[i - 1]
        for j in range(1, lb + 1):
            cb = b[j - 1]
            cost = prev1[j - 1] if ca == cb else prev1[j - 1] + 1
            deletion = prev1[j] + 1
            if deletion < cost:
                cost = deletion
            insertion = cur[j - 1] + 1
            if insertion < cost:
                cost = insertion
            if i > 1 and j > 1 and ca == b[j - 2] and a[i - 2] == cb:
                transposition = prev2[j - 2] + 1
                if transposition < cost:
                    cost = transposition
            cur[j] = cost
        prev2, prev1, cur = prev1, cur, prev2
    return prev1[lb]


def normalized_dl(a: str, b: str) -> float:
    """Damerau-Levenshtein distance divided by the longer string's character
    length (after lowercasing). Two empty strings are defined as distance 0."""
    a = a.lower()
    b = b.lower()
    longest = max(len(a), len(b))
    if longest == 0:
        return 0.0
    return damerau_levenshtein(a, b) / longest


# ---------------------------------------------------------------------------
# Lexical bias


def default_lemmatizer(text: str) -> list[str]:
    """Light lexical normalizer: lowercase alphabetic tokens with common plural
    endings stripped. Inject a proper lemmatizer for production-grade tables."""
    lemmas = []
    for word in re.findall(r"[a-z]+", text.lower()):
        if word.endswith("sses"):
            word = word[:-2]
        elif word.endswith("ies") and len(word) > 4:
            word = word[:-3] + "y"
        elif word.endswith("s") and not word.endswith(("ss", "us")):
            word = word[:-1]
        lemmas.append(word)
    return lemmas


@dataclass(frozen=True)
class LemmaBias:
    lemma: str
    moral_count: int
    immoral_count: int
    skew: int


@dataclass(frozen=True)
class LemmaBiasTable:
    """Top-k lemmas ranked by absolute moral/immoral occurrence skew.

    Carries the lemmatizer it was built with so that scoring applies the
    same normalization.
    """

    entries: tuple[LemmaBias, ...]
    target_field: str
    lemmatizer: Lemmatizer

    @property
    def lemmas(self) -> frozenset[str]:
        return frozenset(entry.lemma for entry in self.entries)


def _target_texts(story: Story, target_field: str) -> tuple[str, str]:
    try:
        moral_field, immoral_field = TARGET_FIELDS[target_field]
    except KeyError:
        raise SplittingError(
            f"unknown target field {target_field!r}; expected one of {sorted(TARGET_FIELDS)}"
        )
    return getattr(story, moral_field), getattr(story, immoral_field)


def build_lemma_bias_table(
    stories: Sequence[Story],
    lemmatizer: Lemmatizer,
    target_field: str,
    k: int = DEFAULT_LEMMA_COUNT,
) -> LemmaBiasTable:
    """Count lemma occurrences separately in moral and immoral target texts and
    keep the k lemmas with the largest class skew (skew 0 is never included).

    Ordering: skew descending, then total count descending, then lexicographic;
    the result is invariant to corpus order.
    """
    moral_counts: dict[str, int] = {}
    immoral_counts: dict[str, int] = {}
    for story in stories:
        moral_text, immoral_text = _target_texts(story, target_field)
        for lemma in lemmatizer(moral_text):
            moral_counts[lemma] = moral_counts.get(lemma, 0) + 1
        for lemma in lemmatizer(immoral_text):
            immoral_counts[lemma] = immoral_counts.get(lemma, 0) + 1
    entries = []
    for lemma in set(moral_counts) | set(immoral_counts):
        moral = moral_counts.get(lemma, 0)
        immoral = immoral_counts.get(lemma, 0)
        skew = abs(moral - immoral)
        if skew > 0:
            entries.append(LemmaBias(lemma, moral, immoral, skew))
    entries.sort(key=lambda e: (-e.skew, -(e.moral_count + e.immoral_count), e.lemma))
    return LemmaBiasTable(tuple(entries[:k]), target_field, lemmatizer)


def bias_score(story: Story, table: LemmaBiasTable, target_field: str) -> int:
    """Total occurrences of table lemmas across both target texts of a story.

    Token occurrences are counted, so repeated lemmas count repeatedly.
    """
    if target_field != table.target_field:
        raise SplittingError(
            f"table was built for {table.target_field!r}, not {target_field!r}"
        )
    lemma_set = table.lemmas
    score = 0
    for text in _target_texts(story, target_field):
        score += sum(1 for lemma in table.lemmatizer(text) if lemma in lemma_set)
    return score


# ---------------------------------------------------------------------------
# Norm-distance clustering


@dataclass(frozen=True)
class Cluster:
    """A group of stories whose norms were clustered together.

    The centroid is the arithmetic mean of raw member embeddings; ``doi`` is
    the cosine distance to the nearest other cluster's centroid (degree of
    isolation), or 0.0 when there is no other cluster.
    """

    member_ids: tuple[str, ...]
    centroid: np.ndarray
    doi: float = 0.0

    @property
    def id(self) -> str:
        return self.member_ids[0]


def embed_norms(stories: Sequence[Story], embedder, workers: int = 1) -> dict[str, np.ndarray]:
    """Embed each story's norm, one vector per story id.

    Identical norm texts are embedded once and share a vector. ``embedder``
    must expose ``embed(texts) -> vectors``; calls may fan out over
    ``workers`` threads, results are keyed by text so order never matters.
    """
    if not stories:
        return {}
    first_story_for: dict[str, str] = {}
    unique_norms: list[str] = []
    for story in stories:
        if story.norm not in first_story_for:
            first_story_for[story.norm] = story.id
            unique_norms.append(story.norm)

    def embed_chunk(chunk: list[str]) -> list[np.ndarray]:
        try:
            vectors = embedder.embed(chunk)
        except Exception as exc:
            raise SplittingError(
                f"embedding provider failed for story {first_story_for[chunk[0]]!r}: {exc}"
            ) from exc
        return [np.asarray(v, dtype=np.float64) for v in vectors]

    workers = max(1, workers)
    if workers == 1 or len(unique_norms) <= 1:
        vectors = embed_chunk(unique_norms)
    else:
        chunk_size = -(-len(unique_norms) // workers)
        chunks = [unique_norms[i : i + chunk_size] for i in range(0, len(unique_norms), chunk_size)]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            vectors = [v for part in pool.map(embed_chunk, chunks) for v in part]

    by_norm = dict(zip(unique_norms, vectors))
    dim = vectors[0].shape
    for norm, vector in by_norm.items():
        if vector.shape != dim:
            raise SplittingError(
                f"dimension mismatch: norm of story {first_story_for[norm]!r} got {vector.shape}, expected {dim}"
            )
        if not np.all(np.isfinite(vector)):
            raise SplittingError(f"non-finite embedding for story {first_story_for[norm]!r}")
    return {story.id: by_norm[story.norm] for story in stories}


def _cosine_distance_matrix(matrix: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(matrix, axis=1)
    if np.any(norms == 0.0):
        raise SplittingError("zero vector: cosine distance undefined")
    unit = matrix / norms[:, None]
    distances = 1.0 - unit @ unit.T
    # identical vectors must come out at exactly 0 despite float noise
    distances[np.abs(distances) < 1e-12] = 0.0
    return np.clip(distances, 0.0, 2.0)


def agglomerative_cluster(vectors: Mapping[str, np.ndarray], k: int) -> list[Cluster]:
    """Bottom-up average-linkage clustering under cosine distance down to k
    clusters, with degree-of-isolation filled in.

    Deterministic: singletons start in story-id order and ties merge the
    lowest-index pair first. Average linkage is maintained exactly via the
    Lance-Williams update on the pairwise distance matrix.
    """
    if k < 1:
        raise SplittingError(f"k must be positive, got {k}")
    ids = sorted(vectors)
    n = len(ids)
    if k > n:
        raise SplittingError(f"k={k} exceeds number of vectors ({n})")
    matrix = np.stack([np.asarray(vectors[i], dtype=np.float64) for i in ids])
    distances = _cosine_distance_matrix(matrix)
    np.fill_diagonal(distances, np.inf)

    sizes = np.ones(n)
    members: list[list[int] | None] = [[i] for i in range(n)]
    active = n
    while active > k:
        flat = int(np.argmin(distances))
        i, j = divmod(flat, n)
        if i > j:
            i, j = j, i
        # average linkage: distance of the merged cluster to every other one
        merged_row = (sizes[i] * distances[i] + sizes[j] * distances[j]) / (sizes[i] + sizes[j])
        distances[i] = merged_row
        distances[:, i] = merged_row
        distances[i, i] = np.inf
        distances[j, :] = np.inf
        distances[:, j] = np.inf
        sizes[i] += sizes[j]
        members[i].extend(members[j])  # type: ignore[union-attr]
        members[j] = None
        active -= 1

    clusters = []
    for slot in range(n):
        if members[slot] is None:
            continue
        member_idx = sorted(members[slot])  # type: ignore[arg-type]
        member_ids = tuple(ids[m] for m in member_idx)
        centroid = matrix[member_idx].mean(axis=0)
        clusters.append(Cluster(member_ids=member_ids, centroid=centroid))
    if len(clusters) > 1:
        clusters = degree_of_isolation(clusters)
    return clusters


def degree_of_isolation(clusters: list[Cluster]) -> list[Cluster]:
    """Fill each cluster's doi: cosine distance from its centroid to the
    nearest other cluster's centroid."""
    if len(clusters) < 2:
        raise SplittingError("degree of isolation needs at least 2 clusters")
    centroids = np.stack([c.centroid for c in clusters])
    distances = _cosine_distance_matrix(centroids)
    np.fill_diagonal(distances, np.inf)
    nearest = distances.min(axis=1)
    return [replace(c, doi=float(d)) for c, d in zip(clusters, nearest)]


# ---------------------------------------------------------------------------
# Assignments


@dataclass(frozen=True)
class SplitAssignment:
    """A total story-id -> partition map plus the per-story metric that drove
    the assignment (cluster doi, bias score, or normalized edit distance)."""

    partition: dict[str, str]
    strategy: str
    target_field: str | None
    ratios: tuple[int, int, int]
    metric_by_story: dict[str, float]


@dataclass(frozen=True)
class SplitReport:
    per_partition_mean: dict[str, float]


def partition_sizes(n: int, ratios: tuple[int, int, int]) -> dict[str, int]:
    """Split n into train/dev/test counts proportional to ratios.

    Exact when n divides evenly; otherwise leftover items go to the largest
    fractional remainders (ties favor train, then dev, then test).
    """
    if len(ratios) != 3 or any(r < 0 for r in ratios) or sum(ratios) <= 0:
        raise SplittingError(f"invalid ratios {ratios!r}")
    total = sum(ratios)
    ideal = [n * r / total for r in ratios]
    base = [int(x) for x in ideal]
    leftover = n - sum(base)
    order = sorted(range(3), key=lambda idx: (-(ideal[idx] - base[idx]), idx))
    for idx in order[:leftover]:
        base[idx] += 1
    return dict(zip(PARTITIONS, base))


def _assign_sorted(ordered_ids: list[str], sizes: dict[str, int]) -> dict[str, str]:
    """Fill test first, then dev, remainder train."""
    partition = {}
    test_end = sizes["test"]
    dev_end = test_end + sizes["dev"]
    for position, story_id in enumerate(ordered_ids):
        if position < test_end:
            partition[story_id] = "test"
        elif position < dev_end:
            partition[story_id] = "dev"
        else:
            partition[story_id] = "train"
    return partition


def split_by_norm_distance(
    stories: Sequence[Story],
    embedder,
    k: int,
    ratios: tuple[int, int, int],
    workers: int = 1,
) -> SplitAssignment:
    """Assign whole norm clusters, most isolated first, to test until its quota
    is met or exceeded, then to dev, remainder to train."""
    vectors = embed_norms(stories, embedder, workers=workers)
    clusters = agglomerative_cluster(vectors, k)
    sizes = partition_sizes(len(stories), ratios)
    ordered = sorted(clusters, key=lambda c: (-c.doi, c.id))

    partition: dict[str, str] = {}
    metric: dict[str, float] = {}
    assigned = {"test": 0, "dev": 0}
    for cluster in ordered:
        if assigned["test"] < sizes["test"]:
            target = "test"
        elif assigned["dev"] < sizes["dev"]:
            target = "dev"
        else:
            target = "train"
        for story_id in cluster.member_ids:
            partition[story_id] = target
            metric[story_id] = cluster.doi
        if target in assigned:
            assigned[target] += len(cluster.member_ids)
    return SplitAssignment(partition, "ND", None, tuple(ratios), metric)


def split_by_lexical_bias(
    stories: Sequence[Story],
    lemmatizer: Lemmatizer,
    target_field: str,
    k: int,
    ratios: tuple[int, int, int],
) -> SplitAssignment:
    """Assign stories by ascending bias score: lowest scores go to test, then
    dev, the rest (most biased) to train. Sizes are exact."""
    table = build_lemma_bias_table(stories, lemmatizer, target_field, k)
    scores = {s.id: bias_score(s, table, target_field) for s in stories}
    ordered = sorted(scores, key=lambda sid: (scores[sid], sid))
    partition = _assign_sorted(ordered, partition_sizes(len(stories), ratios))
    return SplitAssignment(
        partition, "LB", target_field, tuple(ratios), {sid: float(v) for sid, v in scores.items()}
    )


def split_by_minimal_pairs(
    stories: Sequence[Story],
    target_field: str,
    ratios: tuple[int, int, int],
) -> SplitAssignment:
    """Assign stories by ascending normalized Damerau-Levenshtein distance
    between their moral and immoral target texts. Sizes are exact."""
    distances = {}
    for story in stories:
        moral_text, immoral_text = _target_texts(story, target_field)
        distances[story.id] = normalized_dl(moral_text, immoral_text)
    ordered = sorted(distances, key=lambda sid: (distances[sid], sid))
    partition = _assign_sorted(ordered, partition_sizes(len(stories), ratios))
    return SplitAssignment(partition, "MP", target_field, tuple(ratios), distances)


def split_report(
    assignment: SplitAssignment,
    stories: Sequence[Story],
    metric_by_story: Mapping[str, float] | None = None,
) -> SplitReport:
    """Per-partition mean of the strategy metric. Errors if the assignment
    does not cover the corpus exactly or any partition is empty."""
    metric = dict(metric_by_story) if metric_by_story is not None else assignment.metric_by_story
    story_ids = {s.id for s in stories}
    if story_ids != set(assignment.partition):
        raise SplittingError("assignment does not cover the corpus exactly")
    by_partition: dict[str, list[float]] = {p: [] for p in PARTITIONS}
    for story_id in story_ids:
        by_partition[assignment.partition[story_id]].append(metric[story_id])
    means = {}
    for name in PARTITIONS:
        values = by_partition[name]
        if not values:
            raise SplittingError(f"partition {name!r} is empty: mean undefined")
        means[name] = sum(values) / len(values)
    return SplitReport(per_partition_mean=means)


def stories_by_partition(
    assignment: SplitAssignment, stories: Iterable[Story]
) -> dict[str, list[Story]]:
    """Group stories by their assigned partition, preserving corpus order."""
    groups: dict[str, list[Story]] = {p: [] for p in PARTITIONS}
    for story in stories:
        groups[assignment.partition[story.id]].append(story)
    return groups
