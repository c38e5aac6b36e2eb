import functools
import itertools
import random

import numpy as np
import pytest

from coekit import splitting
from coekit.providers import MockHashEmbedder
from coekit.splitting import (
    Cluster,
    LemmaBias,
    LemmaBiasTable,
    SplittingError,
    agglomerative_cluster,
    bias_score,
    build_lemma_bias_table,
    damerau_levenshtein,
    degree_of_isolation,
    embed_norms,
    normalized_dl,
    partition_sizes,
    split_by_lexical_bias,
    split_by_minimal_pairs,
    split_by_norm_distance,
    split_report,
)

from _synth import planted_corpus, random_corpus
from test_corpus import make_story


def dl_oracle(a, b):
    """Memoized recursion straight from the restricted edit-distance definition."""

    @functools.lru_cache(maxsize=None)
    def rec(i, j):
        if i == 0:
            return j
        if j == 0:
            return i
        best = rec(i - 1, j - 1) + (a[i - 1] != b[j - 1])
        best = min(best, rec(i - 1, j) + 1, rec(i, j - 1) + 1)
        if i > 1 and j > 1 and a[i - 1] == b[j - 2] and a[i - 2] == b[j - 1]:
            best = min(best, rec(i - 2, j - 2) + 1)
        return best

    return rec(len(a), len(b))


def levenshtein(a, b):
    previous = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        current = [i]
        for j, cb in enumerate(b, start=1):
            current.append(min(previous[j] + 1, current[j - 1] + 1, previous[j - 1] + (ca != cb)))
        previous = current
    return previous[len(b)]


class TestDamerauLevenshtein:
    def test_identical(self):
        assert damerau_levenshtein("abc", "abc") == 0

    def test_single_transposition(self):
        assert damerau_levenshtein("ab", "ba") == 1

    def test_kitten_sitting(self):
        assert damerau_levenshtein("kitten", "sitting") == 3
        assert dl_oracle("kitten", "sitting") == 3

    def test_lowercases_before_comparing(self):
        assert damerau_levenshtein("ABC", "abc") == 0

    def test_empty_sides(self):
        assert damerau_levenshtein("", "") == 0
        assert damerau_levenshtein("", "abc") == 3
        assert damerau_levenshtein("abc", "") == 3

    def test_matches_oracle_on_random_pairs(self):
        rng = random.Random(5)
        for _ in range(400):
            a = "".join(rng.choice("abc") for _ in range(rng.randint(0, 8)))
            b = "".join(rng.choice("abc") for _ in range(rng.randint(0, 8)))
            assert damerau_levenshtein(a, b) == dl_oracle(a, b)

    def test_symmetry_and_length_bound(self):
        rng = random.Random(6)
        for _ in range(300):
            a = "".join(rng.choice("abcd") for _ in range(rng.randint(0, 7)))
            b = "".join(rng.choice("abcd") for _ in range(rng.randint(0, 7)))
            d = damerau_levenshtein(a, b)
            assert d == damerau_levenshtein(b, a)
            assert d <= len(a) + len(b)
            assert d <= levenshtein(a, b)  # a transposition never hurts


class TestNormalizedDl:
    def test_identical(self):
        assert normalized_dl("same", "same") == 0.0

    def test_transposition_pair(self):
        assert normalized_dl("ab", "ba") == 0.5

    def test_kitten_sitting(self):
        assert normalized_dl("kitten", "sitting") == pytest.approx(3 / 7)

    def test_both_empty_defined_as_zero(self):
        assert normalized_dl("", "") == 0.0

    def test_one_empty(self):
        assert normalized_dl("", "ab") == 1.0

    def test_range(self):
        rng = random.Random(7)
        for _ in range(200):
            a = "".join(rng.choice("ab") for _ in range(rng.randint(0, 6)))
            b = "".join(rng.choice("ab") for _ in range(rng.randint(0, 6)))
            assert 0.0 <= normalized_dl(a, b) <= 1.0


class TestLemmaBiasTable:
    def test_planted_counts_match_hand_tabulation(self):
        pairs = [
            ("donates donates bread", "walks away"),
            ("shares soup", "snatches soup"),
            ("walks in", "snatches snatches coins"),
            ("mends fence", "mocks peer"),
            ("walks out", "walks off"),
            ("soothes child", "wrecks toy"),
        ]
        stories = [
            make_story(i, moral_action=m, immoral_action=im) for i, (m, im) in enumerate(pairs)
        ]
        table = build_lemma_bias_table(stories, str.split, "actions", k=3)
        assert table.entries == (
            LemmaBias("snatches", 0, 3, 3),
            LemmaBias("donates", 2, 0, 2),
            LemmaBias("away", 0, 1, 1),
        )

    def test_balanced_lemma_excluded(self):
        stories = [make_story(0, moral_action="soup now", immoral_action="soup later")]
        table = build_lemma_bias_table(stories, str.split, "actions", k=100)
        assert "soup" not in table.lemmas

    def test_maximal_skew_heads_table(self):
        stories = [
            make_story(i, moral_action="donates food", immoral_action="keeps food")
            for i in range(4)
        ]
        table = build_lemma_bias_table(stories, str.split, "actions", k=100)
        top = table.entries[0]
        assert top.lemma in ("donates", "keeps")
        assert top.skew == 4

    def test_corpus_order_invariance(self):
        rng = random.Random(9)
        stories = random_corpus(30, rng)
        table = build_lemma_bias_table(stories, splitting.default_lemmatizer, "actions", k=50)
        shuffled = stories[:]
        rng.shuffle(shuffled)
        assert (
            build_lemma_bias_table(shuffled, splitting.default_lemmatizer, "actions", k=50).entries
            == table.entries
        )

    def test_length_capped_by_distinct_skewed_lemmas(self):
        stories = [make_story(0, moral_action="donates", immoral_action="keeps")]
        table = build_lemma_bias_table(stories, str.split, "actions", k=100)
        assert len(table.entries) == 2


class TestBiasScore:
    def _table(self, lemmas, lemmatizer=str.split):
        entries = tuple(LemmaBias(lemma, 1, 0, 1) for lemma in lemmas)
        return LemmaBiasTable(entries, "actions", lemmatizer)

    def test_counts_duplicate_occurrences(self):
        story = make_story(moral_action="steal bread steal", immoral_action="buy bread")
        assert bias_score(story, self._table(["steal", "praise"]), "actions") == 2

    def test_zero_when_no_lemma_present(self):
        story = make_story(moral_action="greet all", immoral_action="leave fast")
        assert bias_score(story, self._table(["steal"]), "actions") == 0

    def test_inflection_counts_through_lemmatizer(self):
        def lemmatizer(text):
            return ["steal" if w.lower().startswith("steal") else w.lower() for w in text.split()]

        story = make_story(moral_action="Stealing apples", immoral_action="walks off")
        assert bias_score(story, self._table(["steal"], lemmatizer), "actions") == 1

    def test_target_field_mismatch_rejected(self):
        with pytest.raises(SplittingError):
            bias_score(make_story(), self._table(["steal"]), "consequences")


class TestEmbedNorms:
    def test_identical_norms_share_vectors(self):
        stories = [make_story(0, norm="be kind"), make_story(1, norm="be kind")]
        vectors = embed_norms(stories, MockHashEmbedder(dim=16, seed=0))
        assert np.array_equal(vectors["s0"], vectors["s1"])

    def test_empty_story_list(self):
        assert embed_norms([], MockHashEmbedder()) == {}

    def test_vectors_match_independent_hash_oracle(self):
        # recompute the hashed 1..3-gram histogram from its definition
        def oracle(text, dim, seed):
            vec = [0.0] * dim
            for n in (1, 2, 3):
                for i in range(len(text) - n + 1):
                    value = 0
                    for byte in text[i : i + n].encode("utf-8"):
                        value = value * 31 + byte
                    vec[(value + seed) % dim] += 1.0
            return vec

        stories = [
            make_story(0, norm="ab"),
            make_story(1, norm="b"),
            make_story(2, norm="ab ba"),
        ]
        vectors = embed_norms(stories, MockHashEmbedder(dim=8, seed=7))
        for story in stories:
            assert vectors[story.id].tolist() == oracle(story.norm, 8, 7)

    def test_worker_count_does_not_change_vectors(self):
        stories = random_corpus(17, random.Random(2))
        single = embed_norms(stories, MockHashEmbedder(dim=16, seed=1), workers=1)
        multi = embed_norms(stories, MockHashEmbedder(dim=16, seed=1), workers=8)
        assert all(np.array_equal(single[s.id], multi[s.id]) for s in stories)

    def test_provider_failure_names_story(self):
        class Boom:
            def embed(self, texts):
                raise RuntimeError("down")

        with pytest.raises(SplittingError, match="s0"):
            embed_norms([make_story(0)], Boom())


class TestAgglomerativeCluster:
    def test_n_equals_k_gives_singletons(self):
        vectors = {f"s{i}": np.array([1.0, float(i)]) for i in range(4)}
        clusters = agglomerative_cluster(vectors, 4)
        assert sorted(c.member_ids for c in clusters) == [("s0",), ("s1",), ("s2",), ("s3",)]

    def test_two_tight_pairs_match_bruteforce_partition(self):
        vectors = {
            "a": np.array([1.0, 0.0]),
            "b": np.array([0.98, 0.02]),
            "c": np.array([0.0, 1.0]),
            "d": np.array([0.02, 0.98]),
        }
        ids = sorted(vectors)
        unit = {i: vectors[i] / np.linalg.norm(vectors[i]) for i in ids}

        def avg_intra(group):
            pairs = list(itertools.combinations(group, 2))
            if not pairs:
                return 0.0
            return sum(1.0 - float(unit[x] @ unit[y]) for x, y in pairs) / len(pairs)

        best = min(
            (
                frozenset({frozenset(group), frozenset(set(ids) - set(group))})
                for r in range(1, 4)
                for group in itertools.combinations(ids, r)
            ),
            key=lambda partition: sum(avg_intra(tuple(g)) for g in partition),
        )
        clusters = agglomerative_cluster(vectors, 2)
        assert {frozenset(c.member_ids) for c in clusters} == set(best)

    def test_k_one_holds_everything_with_zero_doi(self):
        vectors = {"a": np.array([1.0, 0.0]), "b": np.array([0.0, 1.0])}
        clusters = agglomerative_cluster(vectors, 1)
        assert len(clusters) == 1
        assert clusters[0].member_ids == ("a", "b")
        assert clusters[0].doi == 0.0

    def test_k_larger_than_n_rejected(self):
        with pytest.raises(SplittingError):
            agglomerative_cluster({"a": np.array([1.0])}, 2)

    def test_zero_vector_rejected(self):
        vectors = {"a": np.array([0.0, 0.0]), "b": np.array([1.0, 0.0])}
        with pytest.raises(SplittingError, match="zero vector"):
            agglomerative_cluster(vectors, 1)

    def test_centroid_is_mean_of_members(self):
        vectors = {"a": np.array([2.0, 0.0]), "b": np.array([4.0, 0.0]), "c": np.array([0.0, 1.0])}
        clusters = agglomerative_cluster(vectors, 2)
        pair = next(c for c in clusters if len(c.member_ids) == 2)
        assert pair.member_ids == ("a", "b")
        assert np.allclose(pair.centroid, [3.0, 0.0])

    def test_deterministic_under_input_order(self):
        rng = random.Random(4)
        vectors = {f"s{i}": np.array([rng.random(), rng.random()]) + 0.1 for i in range(20)}
        reference = agglomerative_cluster(vectors, 5)
        shuffled_items = list(vectors.items())
        rng.shuffle(shuffled_items)
        again = agglomerative_cluster(dict(shuffled_items), 5)
        assert [c.member_ids for c in reference] == [c.member_ids for c in again]
        assert [c.doi for c in reference] == [c.doi for c in again]


class TestDegreeOfIsolation:
    def _cluster(self, name, centroid):
        return Cluster(member_ids=(name,), centroid=np.asarray(centroid, dtype=float))

    def test_orthogonal_unit_centroids(self):
        clusters = degree_of_isolation(
            [self._cluster("a", [1.0, 0.0]), self._cluster("b", [0.0, 1.0])]
        )
        assert [c.doi for c in clusters] == [1.0, 1.0]

    def test_identical_centroids(self):
        clusters = degree_of_isolation(
            [self._cluster("a", [1.0, 1.0]), self._cluster("b", [1.0, 1.0])]
        )
        assert [c.doi for c in clusters] == [0.0, 0.0]

    def test_three_cluster_hand_case(self):
        s = 1 / np.sqrt(2)
        clusters = degree_of_isolation(
            [
                self._cluster("x", [1.0, 0.0]),
                self._cluster("y", [0.0, 1.0]),
                self._cluster("z", [s, s]),
            ]
        )
        expected = 1 - s  # hand pairwise table: x-y is 1, x-z and y-z are 1 - 1/sqrt(2)
        assert clusters[0].doi == pytest.approx(expected)
        assert clusters[1].doi == pytest.approx(expected)
        assert clusters[2].doi == pytest.approx(expected)

    def test_fewer_than_two_rejected(self):
        with pytest.raises(SplittingError):
            degree_of_isolation([self._cluster("a", [1.0])])


class TestPartitionSizes:
    def test_exact_division(self):
        assert partition_sizes(1200, (10, 1, 1)) == {"train": 1000, "dev": 100, "test": 100}

    def test_remainders_sum_to_n(self):
        rng = random.Random(12)
        for _ in range(100):
            n = rng.randint(1, 500)
            ratios = (rng.randint(1, 10), rng.randint(1, 10), rng.randint(1, 10))
            sizes = partition_sizes(n, ratios)
            assert sum(sizes.values()) == n

    def test_invalid_ratios(self):
        with pytest.raises(SplittingError):
            partition_sizes(10, (0, 0, 0))


def _norm_distance_oracle(stories, dim=32, seed=0):
    """Independent per-family DoI computation on a planted-family corpus."""
    embedder = MockHashEmbedder(dim=dim, seed=seed)
    families = {}
    for story in stories:
        families.setdefault(story.norm, []).append(story.id)
    norm_texts = sorted(families)
    vectors = np.array(embedder.embed(norm_texts))
    unit = vectors / np.linalg.norm(vectors, axis=1, keepdims=True)
    distances = 1.0 - unit @ unit.T
    np.fill_diagonal(distances, np.inf)
    doi = distances.min(axis=1)
    return {norm: float(d) for norm, d in zip(norm_texts, doi)}, families


class TestSplitByNormDistance:
    def _twelve_story_corpus(self):
        norms = {
            "A": "alpha alpha customs",
            "B": "alpha beta customs",
            "C": "gregarious gulls gather",
            "D": "zealous zebras zigzag",
        }
        stories = []
        for fi, (family, norm) in enumerate(sorted(norms.items())):
            for j in range(3):
                stories.append(make_story(fi * 3 + j, norm=norm))
        return stories

    def test_planted_isolated_clusters_fill_test_and_dev(self):
        stories = self._twelve_story_corpus()
        doi_by_norm, families = _norm_distance_oracle(stories, dim=32, seed=0)
        # families ordered most isolated first, ties by lowest member id
        ranked = sorted(
            families, key=lambda norm: (-doi_by_norm[norm], min(families[norm]))
        )
        assignment = split_by_norm_distance(
            stories, MockHashEmbedder(dim=32, seed=0), k=4, ratios=(2, 1, 1)
        )
        for expected, norm in zip(("test", "dev", "train", "train"), ranked):
            for story_id in families[norm]:
                assert assignment.partition[story_id] == expected
        # shared-word families are the least isolated, so they must train
        assert doi_by_norm["alpha alpha customs"] < doi_by_norm["gregarious gulls gather"]
        assert doi_by_norm["alpha beta customs"] < doi_by_norm["zealous zebras zigzag"]

    def test_all_identical_norms_still_total_and_deterministic(self):
        stories = [make_story(i, norm="same rule") for i in range(8)]
        first = split_by_norm_distance(stories, MockHashEmbedder(dim=8), k=2, ratios=(2, 1, 1))
        second = split_by_norm_distance(stories, MockHashEmbedder(dim=8), k=2, ratios=(2, 1, 1))
        assert sorted(first.partition) == [s.id for s in stories]
        assert first.partition == second.partition
        assert set(first.metric_by_story.values()) == {0.0}

    def test_whole_clusters_stay_together(self):
        stories = planted_corpus(n=120, families=6, seed=3)
        assignment = split_by_norm_distance(
            stories, MockHashEmbedder(dim=64, seed=1), k=6, ratios=(10, 1, 1)
        )
        by_norm = {}
        for story in stories:
            by_norm.setdefault(story.norm, set()).add(assignment.partition[story.id])
        assert all(len(parts) == 1 for parts in by_norm.values())


class TestSplitByLexicalBias:
    def test_lowest_scores_go_to_test(self):
        stories = [
            make_story(0, moral_action="plain walk", immoral_action="plain run"),
            make_story(1, moral_action="plain sit", immoral_action="plain stand"),
            make_story(2, moral_action="donates donates donates", immoral_action="keeps all"),
            make_story(3, moral_action="donates donates donates donates donates", immoral_action="keeps it"),
        ]
        assignment = split_by_lexical_bias(stories, str.split, "actions", k=100, ratios=(1, 1, 2))
        assert assignment.partition["s0"] == "test"
        assert assignment.partition["s1"] == "test"

    def test_all_equal_scores_assign_by_id_with_exact_sizes(self):
        stories = [make_story(i, moral_action="same text", immoral_action="same text") for i in range(8)]
        assignment = split_by_lexical_bias(stories, str.split, "actions", k=10, ratios=(2, 1, 1))
        sizes = {p: 0 for p in splitting.PARTITIONS}
        for partition in assignment.partition.values():
            sizes[partition] += 1
        assert sizes == {"train": 4, "dev": 2, "test": 2}
        assert assignment.partition["s0"] == "test"
        assert assignment.partition["s1"] == "test"
        assert assignment.partition["s2"] == "dev"


class TestSplitByMinimalPairs:
    def test_identical_pair_enters_test_first(self):
        stories = [
            make_story(0, moral_action="same act", immoral_action="same act"),
            make_story(1, moral_action="one thing", immoral_action="another thing entirely"),
            make_story(2, moral_action="go north", immoral_action="flee south fast"),
            make_story(3, moral_action="sit", immoral_action="run very far away"),
        ]
        assignment = split_by_minimal_pairs(stories, "actions", ratios=(2, 1, 1))
        assert assignment.partition["s0"] == "test"
        assert assignment.metric_by_story["s0"] == 0.0

    def test_planted_distances_fill_lowest_first(self):
        stories = [
            make_story(0, moral_action="aaaaaaaaaa", immoral_action="aaaaaaaaab"),  # 0.1
            make_story(1, moral_action="aaaaaaaaaa", immoral_action="aaaaaaaabb"),  # 0.2
            make_story(2, moral_action="aaaaaaaaaa", immoral_action="aabbbbbbbb"),  # 0.8
            make_story(3, moral_action="aaaaaaaaaa", immoral_action="abbbbbbbbb"),  # 0.9
        ]
        assignment = split_by_minimal_pairs(stories, "actions", ratios=(1, 1, 2))
        assert assignment.partition == {"s0": "test", "s1": "test", "s2": "dev", "s3": "train"}


class TestSplitReport:
    def test_means_from_planted_distances(self):
        stories = [
            make_story(0, moral_action="aaaaaaaaaa", immoral_action="aaaaaaaaab"),
            make_story(1, moral_action="aaaaaaaaaa", immoral_action="aaaaaaaabb"),
            make_story(2, moral_action="aaaaaaaaaa", immoral_action="aabbbbbbbb"),
            make_story(3, moral_action="aaaaaaaaaa", immoral_action="abbbbbbbbb"),
        ]
        assignment = split_by_minimal_pairs(stories, "actions", ratios=(1, 1, 2))
        report = split_report(assignment, stories)
        assert report.per_partition_mean == pytest.approx({"test": 0.15, "dev": 0.8, "train": 0.9})

    def test_empty_partition_is_an_error(self):
        stories = [make_story(i) for i in range(4)]
        assignment = split_by_minimal_pairs(stories, "actions", ratios=(1, 0, 0))
        with pytest.raises(SplittingError, match="empty"):
            split_report(assignment, stories)

    def test_all_zero_test_scores_mean_zero(self):
        # s0/s1 use tokens that appear equally in both classes (skew 0), so
        # nothing of theirs enters the bias table
        stories = [
            make_story(0, moral_action="soup now", immoral_action="soup now"),
            make_story(1, moral_action="tea later", immoral_action="tea later"),
            make_story(2, moral_action="donates donates", immoral_action="keeps keeps"),
            make_story(3, moral_action="donates donates donates", immoral_action="keeps keeps keeps"),
        ]
        assignment = split_by_lexical_bias(stories, str.split, "actions", k=100, ratios=(1, 1, 2))
        report = split_report(assignment, stories)
        assert report.per_partition_mean["test"] == 0.0

    def test_incomplete_assignment_rejected(self):
        stories = [make_story(i) for i in range(4)]
        assignment = split_by_minimal_pairs(stories[:3], "actions", ratios=(1, 1, 1))
        with pytest.raises(SplittingError, match="cover"):
            split_report(assignment, stories)


class TestSplitProperties:
    MONOTONE = {
        "ND": lambda m: m["test"] >= m["dev"] >= m["train"],
        "LB": lambda m: m["test"] <= m["dev"] <= m["train"],
        "MP": lambda m: m["test"] <= m["dev"] <= m["train"],
    }

    def _assignments(self, stories, seed):
        yield split_by_norm_distance(
            stories, MockHashEmbedder(dim=32, seed=seed), k=min(4, len(stories)), ratios=(2, 1, 1)
        )
        yield split_by_lexical_bias(
            stories, splitting.default_lemmatizer, "actions", k=20, ratios=(2, 1, 1)
        )
        yield split_by_minimal_pairs(stories, "actions", ratios=(2, 1, 1))

    def test_no_leakage_and_monotone_audit_on_random_corpora(self):
        rng = random.Random(21)
        for trial in range(25):
            stories = random_corpus(rng.randint(8, 40), rng)
            for assignment in self._assignments(stories, trial):
                assert sorted(assignment.partition) == sorted(s.id for s in stories)
                # cluster-granular ND fills can leave a partition empty on
                # degenerate geometry; the mean is only defined otherwise
                if len(set(assignment.partition.values())) < 3:
                    with pytest.raises(SplittingError):
                        split_report(assignment, stories)
                    continue
                report = split_report(assignment, stories)
                assert self.MONOTONE[assignment.strategy](report.per_partition_mean), (
                    assignment.strategy,
                    report.per_partition_mean,
                )

    def test_exact_sizes_for_lb_and_mp(self):
        rng = random.Random(31)
        for _ in range(10):
            stories = random_corpus(rng.choice([8, 12, 16, 24]), rng)
            expected = partition_sizes(len(stories), (2, 1, 1))
            for assignment in [
                split_by_lexical_bias(stories, str.split, "actions", 20, (2, 1, 1)),
                split_by_minimal_pairs(stories, "actions", (2, 1, 1)),
            ]:
                sizes = {p: 0 for p in splitting.PARTITIONS}
                for partition in assignment.partition.values():
                    sizes[partition] += 1
                assert sizes == expected
