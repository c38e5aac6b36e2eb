import math

import pytest

from model_server.models import HashEmbedder, KeywordClassifier, NgramGenerator

# after "start": b appears 6 times, c 3 times, d once
PLANTED = "start b start c start b start b start c start b start d start b start c start b"


class TestNgramGenerator:
    def test_returns_n_candidates(self):
        gen = NgramGenerator()
        assert len(gen.generate("<|NRM|> be kind <|M_ACT|>", 7, 0.9, 5, 1)) == 7

    def test_same_request_is_deterministic(self):
        gen = NgramGenerator()
        a = gen.generate("p <|M_ACT|>", 5, 0.9, 10, 3)
        b = gen.generate("p <|M_ACT|>", 5, 0.9, 10, 3)
        assert a == b

    def test_different_seed_changes_samples(self):
        gen = NgramGenerator()
        a = gen.generate("p <|M_ACT|>", 5, 0.95, 15, 3)
        b = gen.generate("p <|M_ACT|>", 5, 0.95, 15, 4)
        assert a != b

    def test_nucleus_cutoff_restricts_to_head_of_distribution(self):
        gen = NgramGenerator(train_text=PLANTED)
        # p(b|start)=0.6 >= top_p=0.5, so the nucleus is exactly {b}
        for text in gen.generate("prompt ends with start", 20, 0.5, 1, 9):
            assert text == "b"

    def test_wider_nucleus_admits_more_tokens(self):
        gen = NgramGenerator(train_text=PLANTED)
        seen = set()
        for text in gen.generate("prompt ends with start", 100, 0.95, 1, 9):
            seen.add(text)
        assert "b" in seen and "c" in seen

    def test_max_new_tokens_respected(self):
        gen = NgramGenerator()
        for text in gen.generate("sam", 3, 0.9, 4, 0):
            assert len(text.split()) == 4

    def test_unknown_final_token_falls_back_to_unigrams(self):
        gen = NgramGenerator(train_text=PLANTED)
        texts = gen.generate("zzzunknown", 5, 1.0, 3, 2)
        assert all(len(t.split()) == 3 for t in texts)

    def test_empty_training_text_rejected(self):
        with pytest.raises(ValueError):
            NgramGenerator(train_text="   ")


class TestKeywordClassifier:
    def test_distribution_sums_to_one(self):
        clf = KeywordClassifier({"moral": ["kind"], "immoral": ["grabs"]})
        probs = clf.classify("a kind act", ["moral", "immoral"])
        assert sum(probs.values()) == pytest.approx(1.0, abs=1e-9)

    def test_label_order_matches_request(self):
        clf = KeywordClassifier({"moral": ["kind"], "immoral": ["grabs"]})
        probs = clf.classify("text", ["immoral", "moral"])
        assert list(probs) == ["immoral", "moral"]

    def test_keyword_hits_raise_probability(self):
        clf = KeywordClassifier({"moral": ["kind"], "immoral": ["grabs"]})
        kind = clf.classify("a kind kind act", ["moral", "immoral"])["moral"]
        neutral = clf.classify("an act", ["moral", "immoral"])["moral"]
        assert kind > neutral

    def test_unconfigured_label_still_valid(self):
        clf = KeywordClassifier({"moral": ["kind"]})
        probs = clf.classify("kind", ["moral", "other"])
        assert sum(probs.values()) == pytest.approx(1.0)
        assert probs["other"] == pytest.approx(1.0 / (1.0 + math.e))

    def test_bad_temperature_rejected(self):
        with pytest.raises(ValueError):
            KeywordClassifier({}, temperature=0.0)


class TestHashEmbedder:
    def test_fixed_dimension(self):
        vectors = HashEmbedder(dim=32).embed(["one", "two longer text"])
        assert all(len(v) == 32 for v in vectors)

    def test_deterministic(self):
        emb = HashEmbedder(dim=16, seed=2)
        assert emb.embed(["abc"]) == emb.embed(["abc"])

    def test_bad_dim_rejected(self):
        with pytest.raises(ValueError):
            HashEmbedder(dim=0)
