"""Tests for the reference embedder and cosine similarity."""

import random

import numpy as np
import pytest

from cliproute.embed import (
    EmbedderSpec,
    EmbeddingError,
    cosine,
    default_spec,
    embed_text,
    is_zero,
    register_embedder,
)


@pytest.fixture(scope="module")
def spec():
    return default_spec()


class TestEmbedText:
    def test_deterministic(self, spec):
        a = embed_text(spec, "soup recipe")
        b = embed_text(spec, "soup recipe")
        assert np.array_equal(a, b)

    def test_empty_text_gives_zero_sentinel(self, spec):
        assert is_zero(embed_text(spec, ""))
        assert is_zero(embed_text(spec, "  !?  "))

    def test_unit_norm(self, spec):
        vec = embed_text(spec, "anniversary turtle soup")
        assert abs(np.linalg.norm(vec) - 1.0) <= 1e-9

    def test_depends_only_on_normalized_text(self, spec):
        assert np.array_equal(
            embed_text(spec, "Anniversary, Turtle; SOUP!"),
            embed_text(spec, "anniversary turtle soup"),
        )

    def test_dim_applies(self):
        small = default_spec(dim=64)
        assert embed_text(small, "hello world").shape == (64,)


class TestCosine:
    def test_self_similarity_is_one(self, spec):
        vec = embed_text(spec, "a cat on a mat")
        assert cosine(vec, vec) == pytest.approx(1.0, abs=1e-9)

    def test_zero_sentinel_scores_zero_against_anything(self, spec):
        zero = embed_text(spec, "")
        other = embed_text(spec, "something")
        assert cosine(zero, other) == 0.0
        assert cosine(zero, zero) == 0.0

    def test_symmetry(self, spec):
        rng = random.Random(3)
        words = ["alpha", "bravo", "charlie", "delta", "echo", "foxtrot"]
        for _ in range(50):
            a = " ".join(rng.choices(words, k=rng.randint(1, 5)))
            b = " ".join(rng.choices(words, k=rng.randint(1, 5)))
            va, vb = embed_text(spec, a), embed_text(spec, b)
            assert cosine(va, vb) == pytest.approx(cosine(vb, va), abs=1e-12)

    def test_dimension_mismatch_rejected(self, spec):
        with pytest.raises(EmbeddingError, match="mismatch"):
            cosine(embed_text(spec, "x"), embed_text(default_spec(dim=64), "x"))

    def test_disjoint_token_texts_share_no_buckets(self, spec):
        # Oracle: enumerate both vectors' nonzero indices and verify the
        # hash-collision-free premise before asserting orthogonality.
        a = embed_text(spec, "quartz marble granite")
        b = embed_text(spec, "velvet denim linen")
        nonzero_a = set(np.nonzero(a)[0])
        nonzero_b = set(np.nonzero(b)[0])
        assert not (nonzero_a & nonzero_b)
        assert cosine(a, b) == 0.0

    def test_more_shared_tokens_score_higher(self, spec):
        doc_d = embed_text(spec, "quartz marble granite")
        doc_e = embed_text(spec, "quartz velvet denim")
        query = embed_text(spec, "quartz marble linen")
        assert cosine(query, doc_d) > cosine(query, doc_e)


class TestEmbedderSpec:
    def test_dim_floor(self):
        with pytest.raises(EmbeddingError, match=">= 8"):
            EmbedderSpec(dim=4)

    def test_unknown_name_rejected(self):
        with pytest.raises(EmbeddingError, match="unknown embedder"):
            EmbedderSpec(name="not-registered")

    def test_registry_accepts_new_backends(self):
        def constant_embedder(spec, text):
            vec = np.zeros(spec.dim)
            vec[0] = 1.0
            return vec

        register_embedder("constant-test", constant_embedder)
        spec = EmbedderSpec(name="constant-test", dim=16)
        assert embed_text(spec, "anything")[0] == 1.0

    def test_default_spec_records_hash_parameters(self):
        spec = default_spec()
        assert spec.parameters["hash"] == "blake2b-64"
        assert spec.to_dict()["dim"] == spec.dim
        assert EmbedderSpec.from_dict(spec.to_dict()) == spec
