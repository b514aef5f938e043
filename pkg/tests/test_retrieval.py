import math
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import oracle_bm25, oracle_fused_ranking, oracle_minmax
from rolecraft.errors import ConfigError, StorageError
from rolecraft.gateway import HashEmbeddingBackend
from rolecraft.retrieval import (
    HybridIndex,
    bm25_scores,
    build_index,
    dense_scores,
    load_index,
    minmax_normalize,
    save_index,
    search,
    search_progressive,
)
from rolecraft.tokenize import terms

VOCAB = [
    "owl", "castle", "wand", "potion", "letter", "train", "forest", "mirror",
    "stone", "cloak", "feast", "broom", "ghost", "troll", "chess", "flame",
]


def random_corpus(rng, n_docs, min_len=0, max_len=30):
    docs = []
    for i in range(n_docs):
        length = rng.randint(min_len, max_len)
        text = " ".join(rng.choice(VOCAB) for _ in range(length))
        docs.append((f"d{i:04d}", text))
    return docs


def random_query(rng, max_terms=4):
    return " ".join(rng.choice(VOCAB) for _ in range(rng.randint(1, max_terms)))


@pytest.fixture(scope="module")
def embedder():
    return HashEmbeddingBackend(dim=32)


class TestBm25:
    def test_hand_computed_two_docs(self, embedder):
        index = build_index([("a", "owl castle"), ("b", "owl")], embedder)
        scores = bm25_scores(index, ["owl"])
        idf = math.log(1.0 + 0.5 / 2.5)
        avgdl = 1.5
        expected_a = idf * (1 * 2.2) / (1 + 1.2 * (1 - 0.75 + 0.75 * 2 / avgdl))
        expected_b = idf * (1 * 2.2) / (1 + 1.2 * (1 - 0.75 + 0.75 * 1 / avgdl))
        assert scores[0] == pytest.approx(expected_a, abs=1e-12)
        assert scores[1] == pytest.approx(expected_b, abs=1e-12)
        assert scores[1] > scores[0]

    def test_absent_term_scores_zero(self, embedder):
        index = build_index([("a", "owl castle")], embedder)
        assert bm25_scores(index, ["dragon"]).tolist() == [0.0]

    def test_matches_oracle_on_random_corpora(self, embedder):
        rng = random.Random(7)
        for _ in range(25):
            docs = random_corpus(rng, rng.randint(1, 40))
            index = build_index(docs, embedder)
            query = random_query(rng)
            got = bm25_scores(index, terms(query))
            want = oracle_bm25([terms(t) for _, t in docs], terms(query))
            assert got.tolist() == pytest.approx(want, abs=1e-9)

    def test_idf_is_never_negative(self, embedder):
        # A term in every document still gets positive weight under the
        # shifted idf, so ubiquitous terms cannot flip rankings.
        docs = [(f"d{i}", "owl wand") for i in range(10)]
        index = build_index(docs, embedder)
        assert bm25_scores(index, ["owl"]).min() > 0.0

    def test_empty_query_and_empty_corpus(self, embedder):
        index = build_index([("a", "owl")], embedder)
        assert bm25_scores(index, []).tolist() == [0.0]
        empty = build_index([], embedder)
        assert bm25_scores(empty, ["owl"]).size == 0


class TestMinMax:
    def test_basic(self):
        out = minmax_normalize(np.array([1.0, 3.0, 2.0]))
        assert out.tolist() == [0.0, 1.0, 0.5]

    def test_all_equal_maps_to_ones(self):
        assert minmax_normalize(np.array([2.0, 2.0])).tolist() == [1.0, 1.0]
        assert minmax_normalize(np.array([0.0])).tolist() == [1.0]

    def test_empty(self):
        assert minmax_normalize(np.zeros(0)).size == 0

    @given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=50))
    def test_matches_oracle(self, values):
        got = minmax_normalize(np.array(values, dtype=np.float64))
        assert got.tolist() == pytest.approx(oracle_minmax(values), abs=1e-12)
        assert got.min() >= 0.0 and got.max() <= 1.0


class TestHybridSearch:
    def test_single_doc_fuses_to_one(self, embedder):
        index = build_index([("only", "owl castle")], embedder)
        results = search(index, "owl", embedder)
        assert len(results) == 1
        assert results[0].score == pytest.approx(1.0)

    def test_matches_brute_force_oracle(self, embedder):
        rng = random.Random(11)
        for _ in range(20):
            docs = random_corpus(rng, rng.randint(2, 60))
            index = build_index(docs, embedder)
            query = random_query(rng)
            results = search(index, query, embedder)

            lex = oracle_bm25([terms(t) for _, t in docs], terms(query))
            qvec = embedder.embed([query])[0]
            dense = dense_scores(index, qvec)
            want_ids, want_scores = oracle_fused_ranking(
                [d for d, _ in docs], lex, dense.tolist(), (0.5, 0.5)
            )
            assert [r.doc_id for r in results] == want_ids
            assert [r.score for r in results] == pytest.approx(want_scores, abs=1e-9)

    def test_degenerate_weights_reduce_to_single_family(self, embedder):
        rng = random.Random(13)
        docs = random_corpus(rng, 30, min_len=1)
        index = build_index(docs, embedder)
        query = "owl castle"

        lex_only = search(index, query, embedder, weights=(1.0, 0.0))
        want = minmax_normalize(bm25_scores(index, terms(query)))
        order = sorted(range(len(index)), key=lambda i: (-want[i], index.doc_ids[i]))
        assert [r.doc_id for r in lex_only] == [index.doc_ids[i] for i in order]

        dense_only = search(index, query, embedder, weights=(0.0, 1.0))
        qvec = embedder.embed([query])[0]
        dwant = minmax_normalize(dense_scores(index, qvec))
        dorder = sorted(range(len(index)), key=lambda i: (-dwant[i], index.doc_ids[i]))
        assert [r.doc_id for r in dense_only] == [index.doc_ids[i] for i in dorder]

    def test_tie_break_is_ascending_doc_id(self, embedder):
        docs = [("z9", "owl owl"), ("a1", "owl owl"), ("m5", "owl owl")]
        index = build_index(docs, embedder)
        results = search(index, "owl", embedder)
        assert [r.doc_id for r in results] == ["a1", "m5", "z9"]

    def test_top_k_truncates_after_full_sort(self, embedder):
        rng = random.Random(17)
        docs = random_corpus(rng, 20, min_len=1)
        index = build_index(docs, embedder)
        full = search(index, "owl wand", embedder)
        top3 = search(index, "owl wand", embedder, k=3)
        assert top3 == full[:3]

    def test_termless_query_is_input_error(self, embedder):
        index = build_index([("a", "owl"), ("b", "castle")], embedder)
        with pytest.raises(ConfigError):
            search(index, "!!!", embedder)

    def test_weights_must_sum_to_one(self, embedder):
        with pytest.raises(ConfigError):
            build_index([("a", "owl")], embedder, weights=(0.7, 0.2))
        with pytest.raises(ConfigError):
            build_index([("a", "owl")], embedder, weights=(1.5, -0.5))
        index = build_index([("a", "owl"), ("b", "castle")], embedder)
        with pytest.raises(ConfigError):
            search(index, "owl", embedder, weights=(0.9, 0.2))

    def test_results_carry_raw_family_scores(self, embedder):
        index = build_index([("a", "owl castle"), ("b", "wand")], embedder)
        results = search(index, "owl", embedder)
        raw = {r.doc_id: r for r in results}
        lex = bm25_scores(index, terms("owl"))
        assert raw["a"].lex_raw == lex[0]
        assert raw["b"].lex_raw == lex[1]
        qvec = embedder.embed(["owl"])[0]
        dense = dense_scores(index, qvec)
        assert raw["a"].dense_raw == dense[0]
        assert raw["b"].dense_raw == dense[1]
        assert all(0.0 <= r.score <= 1.0 for r in results)

    def test_empty_docs_get_zero_embeddings(self):
        calls = []

        class CountingEmbedder(HashEmbeddingBackend):
            def embed(self, texts):
                calls.append(list(texts))
                return super().embed(texts)

        embedder = CountingEmbedder(dim=16)
        index = build_index([("a", "owl"), ("b", "..."), ("c", "")], embedder)
        assert calls == [["owl"]]
        assert np.array_equal(index.embeddings[1], np.zeros(16))
        assert np.array_equal(index.embeddings[2], np.zeros(16))

    def test_duplicate_ids_rejected(self, embedder):
        with pytest.raises(ConfigError):
            build_index([("a", "x"), ("a", "y")], embedder)


class TestProgressiveSearch:
    def test_empty_prefix_equals_plain_search(self, embedder):
        rng = random.Random(19)
        docs = random_corpus(rng, 40, min_len=1)
        index = build_index(docs, embedder)
        for prefix in ("", "   ", "\n\t"):
            for _ in range(10):
                query = random_query(rng)
                plain = search(index, query, embedder)
                prog = search_progressive(index, prefix, query, embedder)
                assert [(r.doc_id, r.score) for r in prog] == [
                    (r.doc_id, r.score) for r in plain
                ]

    def test_combined_score_is_mean_of_sub_searches(self, embedder):
        rng = random.Random(23)
        docs = random_corpus(rng, 25, min_len=1)
        index = build_index(docs, embedder)
        prefix, segment = "owl flew over the", "castle wall"
        a = {r.doc_id: r.score for r in search(index, "owl flew over the castle wall", embedder)}
        b = {r.doc_id: r.score for r in search(index, "castle wall", embedder)}
        got = search_progressive(index, prefix, segment, embedder)
        for r in got:
            assert r.score == (a[r.doc_id] + b[r.doc_id]) / 2.0

    def test_prefix_shifts_ranking(self, embedder):
        docs = [
            ("a", "castle gate stone wall"),
            ("b", "owl postal delivery wing"),
        ]
        index = build_index(docs, embedder)
        neutral = search_progressive(index, "", "wall", embedder)
        biased = search_progressive(index, "owl postal delivery", "wall", embedder)
        assert neutral[0].doc_id == "a"
        assert biased[0].score != neutral[0].score


class TestPersistence:
    def test_round_trip(self, tmp_path, embedder):
        rng = random.Random(29)
        docs = random_corpus(rng, 15, min_len=1)
        index = build_index(docs, embedder)
        save_index(index, tmp_path / "idx")
        loaded = load_index(tmp_path / "idx")
        assert loaded.doc_ids == index.doc_ids
        assert loaded.doc_terms == index.doc_terms
        assert loaded.df == index.df
        assert loaded.avgdl == index.avgdl
        assert loaded.weights == index.weights
        assert np.array_equal(loaded.embeddings, index.embeddings)
        query = "owl castle"
        assert search(loaded, query, embedder) == search(index, query, embedder)

    def test_save_is_byte_stable(self, tmp_path, embedder):
        docs = [("a", "owl castle"), ("b", "wand")]
        index = build_index(docs, embedder)
        save_index(index, tmp_path / "one")
        save_index(load_index(tmp_path / "one"), tmp_path / "two")
        for name in ("lexical.json", "embeddings.bin"):
            assert (tmp_path / "one" / name).read_bytes() == (
                tmp_path / "two" / name
            ).read_bytes()

    def test_corrupt_files_raise(self, tmp_path, embedder):
        index = build_index([("a", "owl")], embedder)
        save_index(index, tmp_path / "idx")
        (tmp_path / "idx" / "embeddings.bin").write_bytes(b"XXXX\x00\x00")
        with pytest.raises(StorageError):
            load_index(tmp_path / "idx")
        with pytest.raises(StorageError):
            load_index(tmp_path / "missing")
