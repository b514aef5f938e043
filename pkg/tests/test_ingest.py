import json
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import oracle_chunk_spans
from rolecraft.errors import ConfigError, ParseError, StorageError
from rolecraft.gateway import (
    HashEmbeddingBackend,
    LlmGateway,
    ScriptedChatBackend,
    ScriptedRule,
)
from rolecraft.ingest import (
    Chunk,
    UtteranceRecord,
    build_chunk_index,
    chunk_doc_id,
    chunk_text,
    extract_dialogues,
    load_chunks,
    load_utterances,
    merge_speakers,
    normalize_name,
    save_chunks,
    save_utterances,
    select_relevant_chunks,
    utterances_of,
)
from rolecraft.tokenize import tokenize


def make_gateway(rules):
    return LlmGateway(ScriptedChatBackend(rules), HashEmbeddingBackend(dim=16))


class TestChunking:
    def test_hand_case_spans(self):
        text = " ".join(f"w{i}" for i in range(10))
        chunks = chunk_text(text, chunk_size=4, overlap=1)
        assert [c.token_span for c in chunks] == [(0, 4), (3, 7), (6, 10)]
        assert [c.chunk_id for c in chunks] == [0, 1, 2]
        assert chunks[0].text == "w0 w1 w2 w3"
        assert chunks[1].text == "w3 w4 w5 w6"

    def test_document_shorter_than_window(self):
        chunks = chunk_text("just three tokens", chunk_size=512, overlap=64)
        assert len(chunks) == 1
        assert chunks[0].token_span == (0, 3)
        assert chunks[0].text == "just three tokens"

    def test_empty_document(self):
        assert chunk_text("") == []
        assert chunk_text("   \n ") == []

    def test_window_exactly_fits(self):
        text = " ".join(f"w{i}" for i in range(8))
        chunks = chunk_text(text, chunk_size=4, overlap=2)
        # stride 2: spans 0-4, 2-6, 4-8; generation stops once a window hits the end
        assert [c.token_span for c in chunks] == [(0, 4), (2, 6), (4, 8)]

    def test_invalid_parameters(self):
        with pytest.raises(ConfigError):
            chunk_text("a b", chunk_size=0, overlap=0)
        with pytest.raises(ConfigError):
            chunk_text("a b", chunk_size=4, overlap=4)
        with pytest.raises(ConfigError):
            chunk_text("a b", chunk_size=4, overlap=-1)

    def test_cjk_counts_per_codepoint(self):
        chunks = chunk_text("你好世界再见了", chunk_size=4, overlap=1)
        assert [c.token_span for c in chunks] == [(0, 4), (3, 7)]
        assert chunks[0].text == "你好世界"
        assert chunks[1].text == "界再见了"

    def test_source_doc_recorded(self):
        chunks = chunk_text("a b c", chunk_size=2, overlap=0, source_doc="book.txt")
        assert all(c.source_doc == "book.txt" for c in chunks)

    def test_spans_match_oracle_on_random_documents(self):
        rng = random.Random(5)
        for _ in range(40):
            n = rng.randint(0, 3000)
            text = " ".join("tok" for _ in range(n))
            chunk_size = rng.randint(2, 600)
            overlap = rng.randint(0, chunk_size - 1)
            chunks = chunk_text(text, chunk_size=chunk_size, overlap=overlap)
            want = oracle_chunk_spans(n, chunk_size, overlap)
            assert [c.token_span for c in chunks] == want

    @given(st.integers(0, 400), st.integers(2, 64), st.data())
    @settings(max_examples=60, deadline=None)
    def test_window_invariants(self, n, chunk_size, data):
        overlap = data.draw(st.integers(0, chunk_size - 1))
        text = " ".join(f"w{i}" for i in range(n))
        chunks = chunk_text(text, chunk_size=chunk_size, overlap=overlap)
        if n == 0:
            assert chunks == []
            return
        stride = chunk_size - overlap
        assert chunks[0].token_start == 0
        assert chunks[-1].token_end == n
        covered = set()
        for i, c in enumerate(chunks):
            assert c.chunk_id == i
            assert c.token_start == i * stride
            assert c.token_end - c.token_start <= chunk_size
            if i < len(chunks) - 1:
                assert c.token_end == c.token_start + chunk_size
                # adjacent windows overlap by exactly the configured amount
                assert c.token_end - chunks[i + 1].token_start == overlap
            covered.update(range(c.token_start, c.token_end))
        assert covered == set(range(n))

    def test_chunk_text_is_verbatim_source_span(self):
        text = "One  two\tthree\nfour five six seven"
        tokens = tokenize(text)
        for c in chunk_text(text, chunk_size=3, overlap=1):
            assert c.text == text[tokens[c.token_start].start : tokens[c.token_end - 1].end]


DIALOGUE_JSON = json.dumps(
    [
        {"speaker": "Harry", "utterance": "Where am I?"},
        {"speaker": "Dumbledore", "utterance": "You are safe."},
    ]
)


class TestDialogueExtraction:
    def _chunks(self):
        return [
            Chunk(0, 0, 5, "ALPHA passage with talk"),
            Chunk(1, 4, 9, "BETA passage, silence"),
        ]

    def test_per_chunk_records_and_ordinals(self):
        gw = make_gateway(
            [
                ScriptedRule("ALPHA", DIALOGUE_JSON),
                ScriptedRule("BETA", "[]"),
            ]
        )
        records = extract_dialogues(gw, self._chunks())
        assert records == [
            UtteranceRecord("Harry", "Where am I?", 0, 0),
            UtteranceRecord("Dumbledore", "You are safe.", 0, 1),
        ]
        assert gw.log.tags() == ["dialogue_extract", "dialogue_extract"]

    def test_fenced_json_accepted(self):
        gw = make_gateway(
            [ScriptedRule("ALPHA", f"Sure:\n```json\n{DIALOGUE_JSON}\n```")]
        )
        records = extract_dialogues(gw, self._chunks()[:1])
        assert len(records) == 2

    def test_repair_retry_once(self):
        gw = make_gateway(
            [
                ScriptedRule("could not be parsed", DIALOGUE_JSON),
                ScriptedRule("ALPHA", "sorry, no JSON here"),
            ]
        )
        records = extract_dialogues(gw, self._chunks()[:1])
        assert len(records) == 2
        assert gw.log.tags() == ["dialogue_extract", "dialogue_extract_repair"]

    def test_two_failures_raise(self):
        gw = make_gateway([ScriptedRule("", "still not json")])
        with pytest.raises(ParseError, match="chunk 0"):
            extract_dialogues(gw, self._chunks()[:1])

    def test_empty_fields_are_parse_errors(self):
        for bad in ('[{"speaker": "", "utterance": "hi"}]',
                    '[{"speaker": "A", "utterance": "  "}]'):
            gw = make_gateway([ScriptedRule("", bad)])
            with pytest.raises(ParseError):
                extract_dialogues(gw, self._chunks()[:1])


def rec(i, speaker, chunk=0):
    return UtteranceRecord(speaker, f"line {i}", chunk, i)


class TestSpeakerMerge:
    def test_normalized_equality_merges(self):
        report = merge_speakers([rec(0, "HARRY"), rec(1, "Harry"), rec(2, "Harry")])
        assert {r.speaker for r in report.records} == {"Harry"}
        assert report.alias_map == {"Harry": ["HARRY", "Harry"]}
        assert report.ambiguous == {}

    def test_fullwidth_and_spacing_normalize(self):
        assert normalize_name("ＨＡＲＲＹ  Potter") == "harry potter"
        report = merge_speakers([rec(0, "ＨＡＲＲＹ"), rec(1, "harry")])
        assert len(report.alias_map) == 1

    def test_single_token_containment_merges(self):
        report = merge_speakers(
            [rec(0, "Rubeus Hagrid"), rec(1, "Hagrid"), rec(2, "Hagrid")]
        )
        assert {r.speaker for r in report.records} == {"Hagrid"}
        assert report.alias_map == {"Hagrid": ["Hagrid", "Rubeus Hagrid"]}

    def test_most_frequent_surface_wins_ties_lexicographic(self):
        report = merge_speakers([rec(0, "harry"), rec(1, "Harry")])
        # One occurrence each: lexicographically smaller surface wins.
        assert {r.speaker for r in report.records} == {"Harry"}

    def test_ambiguous_containment_not_merged(self):
        report = merge_speakers(
            [rec(0, "Harry Potter"), rec(1, "Harry Smith"), rec(2, "Harry")]
        )
        speakers = {r.speaker for r in report.records}
        assert speakers == {"Harry Potter", "Harry Smith", "Harry"}
        assert report.ambiguous == {"Harry": ["Harry Potter", "Harry Smith"]}

    def test_user_alias_map_merges(self):
        report = merge_speakers(
            [rec(0, "The Boy Who Lived"), rec(1, "Harry Potter")],
            user_aliases={"Harry Potter": {"The Boy Who Lived"}},
        )
        assert {r.speaker for r in report.records} == {"Harry Potter"}
        assert report.alias_map == {
            "Harry Potter": ["Harry Potter", "The Boy Who Lived"]
        }

    def test_alias_resolves_ambiguity(self):
        report = merge_speakers(
            [rec(0, "Harry Potter"), rec(1, "Harry Smith"), rec(2, "Harry")],
            user_aliases={"Harry Potter": {"Harry"}},
        )
        assert {r.speaker for r in report.records} == {"Harry Potter", "Harry Smith"}
        assert report.ambiguous == {}

    def test_alias_in_two_sets_is_config_error(self):
        with pytest.raises(ConfigError):
            merge_speakers(
                [rec(0, "Harry")],
                user_aliases={"Harry Potter": {"Harry"}, "Harry Smith": {"Harry"}},
            )

    def test_canonical_in_own_alias_set(self):
        report = merge_speakers(
            [rec(0, "hp")], user_aliases={"Harry Potter": {"hp"}}
        )
        assert {r.speaker for r in report.records} == {"Harry Potter"}
        assert "Harry Potter" in report.alias_map["Harry Potter"]

    def test_output_sorted_and_permutation_invariant(self):
        records = [
            rec(1, "Harry", 1),
            rec(0, "HARRY", 0),
            rec(0, "Albus", 1),
            rec(1, "Harry", 0),
        ]
        base = merge_speakers(records)
        rng = random.Random(3)
        for _ in range(10):
            shuffled = records[:]
            rng.shuffle(shuffled)
            again = merge_speakers(shuffled)
            assert again.records == base.records
            assert again.alias_map == base.alias_map
            assert again.ambiguous == base.ambiguous
        assert [(r.chunk_id, r.ordinal) for r in base.records] == sorted(
            (r.chunk_id, r.ordinal) for r in records
        )

    def test_idempotent(self):
        records = [rec(0, "Rubeus Hagrid"), rec(1, "HAGRID"), rec(2, "Hagrid")]
        once = merge_speakers(records)
        twice = merge_speakers(once.records)
        assert twice.records == once.records

    @given(
        st.lists(
            st.sampled_from(
                ["Harry", "HARRY", "Harry Potter", "Hagrid", "Rubeus Hagrid", "Albus"]
            ),
            max_size=12,
        )
    )
    @settings(max_examples=50, deadline=None)
    def test_merge_never_loses_records(self, names):
        records = [rec(i, name) for i, name in enumerate(names)]
        report = merge_speakers(records)
        assert len(report.records) == len(records)
        assert [r.text for r in report.records] == [r.text for r in records]
        # resolution is a function: every surface maps to exactly one canonical
        seen = {}
        for canonical, surfaces in report.alias_map.items():
            assert canonical in surfaces
            for s in surfaces:
                assert s not in seen
                seen[s] = canonical


class TestChunkSelection:
    def _setup(self):
        chunks = [
            Chunk(0, 0, 5, "Albus spoke of the castle"),
            Chunk(1, 4, 9, "nothing relevant in this passage"),
            Chunk(2, 8, 13, "a letter mentions Albus the headmaster in passing"),
            Chunk(3, 12, 17, "the weather was dull and grey"),
        ]
        records = [UtteranceRecord("Albus", "Good evening.", 0, 0)]
        embedder = HashEmbeddingBackend(dim=32)
        index = build_chunk_index(chunks, embedder)
        return chunks, records, index, embedder

    def test_speaking_chunks_always_included(self):
        chunks, records, index, embedder = self._setup()
        selected = select_relevant_chunks(
            "Albus", chunks, index, embedder, 1, records=records
        )
        assert [c.chunk_id for c in selected] == [0]

    def test_fills_to_k_by_score(self):
        chunks, records, index, embedder = self._setup()
        selected = select_relevant_chunks(
            "Albus", chunks, index, embedder, 2, records=records
        )
        assert len(selected) == 2
        assert selected[0].chunk_id == 0
        assert selected[1].chunk_id == 2  # best non-forced hit mentions Albus

    def test_k_larger_than_corpus_returns_all(self):
        chunks, records, index, embedder = self._setup()
        selected = select_relevant_chunks(
            "Albus", chunks, index, embedder, 99, records=records
        )
        assert [c.chunk_id for c in selected] == [0, 1, 2, 3]

    def test_errors(self):
        chunks, records, index, embedder = self._setup()
        with pytest.raises(ConfigError):
            select_relevant_chunks("Albus", chunks, index, embedder, 0, records=records)
        empty = build_chunk_index([], embedder)
        with pytest.raises(ConfigError):
            select_relevant_chunks("Albus", [], empty, embedder, 1, records=records)

    def test_doc_id_padding_keeps_numeric_order(self):
        assert chunk_doc_id(2) < chunk_doc_id(10)


class TestJsonlRoundTrip:
    def test_chunks(self, tmp_path):
        chunks = chunk_text("one two three four five", chunk_size=3, overlap=1)
        path = tmp_path / "chunks.jsonl"
        save_chunks(path, chunks)
        assert load_chunks(path) == chunks

    def test_utterances_unicode(self, tmp_path):
        records = [UtteranceRecord("邓布利多", "你很安全。", 0, 0)]
        path = tmp_path / "utt.jsonl"
        save_utterances(path, records)
        assert load_utterances(path) == records
        assert "邓布利多" in path.read_text(encoding="utf-8")

    def test_corrupt_line_raises(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"chunk_id": 0}\nnot json\n')
        with pytest.raises(StorageError):
            load_chunks(path)

    def test_wrong_shape_raises(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"unexpected": 1}\n')
        with pytest.raises(StorageError):
            load_utterances(path)

    def test_utterances_of(self):
        records = [rec(0, "A"), rec(1, "B"), rec(2, "A")]
        assert [r.ordinal for r in utterances_of(records, "A")] == [0, 2]
