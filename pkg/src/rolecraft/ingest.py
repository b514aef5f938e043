"""Turning a raw book into chunks, utterances and merged speaker names.

Chunking is a sliding token window: ``chunk_size`` tokens per window,
consecutive windows overlap by ``overlap`` tokens, so window *i* covers
token span ``[i*stride, i*stride + chunk_size)`` clipped to the document
end, with ``stride = chunk_size - overlap``.  Chunk text is the exact
character span of its tokens, so chunks quote the source verbatim.

Dialogue extraction asks the model for (speaker, utterance) pairs per
chunk.  Speaker names then go through deterministic alias merging so
"HARRY", "Harry" and "Harry Potter" count as one speaker without any
model call.
"""

from __future__ import annotations

import json
import unicodedata
from collections import Counter
from dataclasses import asdict, dataclass
from pathlib import Path

from .errors import ConfigError, ParseError, StorageError
from .gateway import ChatMessage, EmbeddingBackend, LlmGateway
from .prompts import render
from .retrieval import HybridIndex, search
from .tokenize import TokenizerFn, tokenize

DEFAULT_CHUNK_SIZE = 512
DEFAULT_OVERLAP = 64


@dataclass(frozen=True)
class Chunk:
    chunk_id: int
    token_start: int
    token_end: int
    text: str
    source_doc: str = ""

    @property
    def token_span(self) -> tuple[int, int]:
        return (self.token_start, self.token_end)


def chunk_doc_id(chunk_id: int) -> str:
    """Stable retrieval doc id for a chunk; zero-padded so that the
    lexicographic tie-break used by the index matches numeric order."""
    return f"chunk:{chunk_id:06d}"


def chunk_text(text: str, *, chunk_size: int = DEFAULT_CHUNK_SIZE,
               overlap: int = DEFAULT_OVERLAP, source_doc: str = "",
               tokenizer: TokenizerFn = tokenize) -> list[Chunk]:
    """Split ``text`` into overlapping windows of ``chunk_size`` tokens."""
    if chunk_size < 1:
        raise ConfigError("chunk_size must be at least 1")
    if not 0 <= overlap < chunk_size:
        raise ConfigError("overlap must satisfy 0 <= overlap < chunk_size")
    tokens = tokenizer(text)
    n = len(tokens)
    if n == 0:
        return []
    stride = chunk_size - overlap
    chunks: list[Chunk] = []
    start = 0
    while True:
        end = min(start + chunk_size, n)
        chunks.append(
            Chunk(
                chunk_id=len(chunks),
                token_start=start,
                token_end=end,
                text=text[tokens[start].start : tokens[end - 1].end],
                source_doc=source_doc,
            )
        )
        if end == n:
            break
        start += stride
    return chunks


def build_chunk_index(chunks: list[Chunk], embedder: EmbeddingBackend) -> HybridIndex:
    from .retrieval import build_index

    return build_index([(chunk_doc_id(c.chunk_id), c.text) for c in chunks], embedder)


# ---------------------------------------------------------------------------
# Dialogue extraction


@dataclass(frozen=True)
class UtteranceRecord:
    speaker: str
    text: str
    chunk_id: int
    ordinal: int


def _chat_with_repair(gateway: LlmGateway, prompt: str, tag: str, parse, language: str):
    """One model call plus at most one format-repair retry."""
    reply = gateway.chat([ChatMessage("user", prompt)], tag=tag)
    try:
        return parse(reply)
    except ParseError as exc:
        repair = render("repair", language, error=str(exc)[:200])
        retry = gateway.chat(
            [
                ChatMessage("user", prompt),
                ChatMessage("assistant", reply),
                ChatMessage("user", repair),
            ],
            tag=f"{tag}_repair",
        )
        return parse(retry)


def _parse_dialogue_items(reply: str) -> list[tuple[str, str]]:
    from .parsing import extract_json_array

    items = extract_json_array(reply)
    out = []
    for item in items:
        if (
            not isinstance(item, dict)
            or not isinstance(item.get("speaker"), str)
            or not isinstance(item.get("utterance"), str)
            or not item["speaker"].strip()
            or not item["utterance"].strip()
        ):
            raise ParseError(f"bad dialogue item {item!r}")
        out.append((item["speaker"].strip(), item["utterance"]))
    return out


def extract_dialogues(gateway: LlmGateway, chunks: list[Chunk], *,
                      language: str = "en") -> list[UtteranceRecord]:
    """Ask the model for every (speaker, utterance) pair, chunk by chunk."""
    records: list[UtteranceRecord] = []
    for chunk in chunks:
        prompt = render("dialogue_extract", language, chunk=chunk.text)
        try:
            pairs = _chat_with_repair(
                gateway, prompt, "dialogue_extract", _parse_dialogue_items, language
            )
        except ParseError as exc:
            raise ParseError(
                f"dialogue extraction failed on chunk {chunk.chunk_id}: {exc}"
            ) from exc
        for ordinal, (speaker, text) in enumerate(pairs):
            records.append(UtteranceRecord(speaker, text, chunk.chunk_id, ordinal))
    return records


# ---------------------------------------------------------------------------
# Speaker alias merging

# An alias map is a plain dict: canonical name -> sorted list of all
# surfaces that map to it (the canonical name itself included).
AliasMap = dict[str, list[str]]


def normalize_name(name: str) -> str:
    """NFKC, casefold, collapse internal whitespace."""
    return " ".join(unicodedata.normalize("NFKC", name).casefold().split())


@dataclass
class SpeakerMergeReport:
    records: list[UtteranceRecord]
    alias_map: AliasMap
    ambiguous: dict[str, list[str]]


class _UnionFind:
    def __init__(self):
        self.parent: dict[str, str] = {}

    def add(self, x: str) -> None:
        self.parent.setdefault(x, x)

    def find(self, x: str) -> str:
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a: str, b: str) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            # Deterministic root choice keeps runs reproducible.
            lo, hi = sorted((ra, rb))
            self.parent[hi] = lo


def _validate_user_aliases(user_aliases: dict) -> dict[str, str]:
    """Flatten canonical -> alias-set into normalized alias -> canonical."""
    flat: dict[str, str] = {}
    for canonical in sorted(user_aliases):
        surfaces = set(user_aliases[canonical]) | {canonical}
        for surface in sorted(surfaces):
            key = normalize_name(surface)
            if key in flat and flat[key] != canonical:
                raise ConfigError(
                    f"alias {surface!r} appears under both {flat[key]!r} and {canonical!r}"
                )
            flat[key] = canonical
    return flat


def merge_speakers(records: list[UtteranceRecord],
                   user_aliases: dict | None = None) -> SpeakerMergeReport:
    """Merge speaker name variants into canonical speakers.

    Merging is deterministic and needs no model: names equal after
    normalization merge; a single-token name contained in exactly one
    multi-token name merges into it; containment in two or more distinct
    names is ambiguous and only reported, never auto-merged.  A user
    alias map (canonical -> set of aliases) wins over both rules.  The
    canonical surface is the most frequent original spelling (ties to
    the lexicographically smallest), or the user's canonical verbatim.
    Output is sorted by (chunk_id, ordinal) and the whole operation is
    idempotent and independent of input order.
    """
    flat_aliases = _validate_user_aliases(user_aliases or {})
    surface_counts: Counter[str] = Counter(r.speaker for r in records)
    norm_surfaces: dict[str, set[str]] = {}
    for surface in surface_counts:
        norm_surfaces.setdefault(normalize_name(surface), set()).add(surface)

    uf = _UnionFind()
    for norm in norm_surfaces:
        uf.add(norm)

    forced_canonical: dict[str, str] = {}
    for norm_key, target in sorted(flat_aliases.items()):
        norm_target = normalize_name(target)
        uf.add(norm_target)
        uf.add(norm_key)
        norm_surfaces.setdefault(norm_target, set())
        norm_surfaces.setdefault(norm_key, set())
        uf.union(norm_key, norm_target)
        forced_canonical[uf.find(norm_target)] = target

    multi = [n for n in norm_surfaces if len(n.split()) > 1]
    ambiguous: dict[str, list[str]] = {}
    for norm in sorted(norm_surfaces):
        parts = norm.split()
        if len(parts) != 1:
            continue
        token = parts[0]
        containers = {uf.find(m) for m in multi if token in m.split()}
        if uf.find(norm) in containers:
            # Already attached to one container (alias or earlier merge).
            continue
        if len(containers) == 1:
            uf.union(norm, next(iter(containers)))
        elif len(containers) > 1:
            ambiguous[norm] = sorted(containers)

    # Re-root forced canonicals after all unions.
    forced_by_root: dict[str, str] = {}
    for root, target in forced_canonical.items():
        forced_by_root[uf.find(root)] = target

    clusters: dict[str, set[str]] = {}
    for norm, surfaces in norm_surfaces.items():
        clusters.setdefault(uf.find(norm), set()).update(surfaces)

    canonical_of_root: dict[str, str] = {}
    for root, surfaces in clusters.items():
        if root in forced_by_root:
            canonical_of_root[root] = forced_by_root[root]
        elif surfaces:
            canonical_of_root[root] = min(
                surfaces, key=lambda s: (-surface_counts[s], s)
            )
        else:
            canonical_of_root[root] = root

    surface_to_canonical = {
        surface: canonical_of_root[root]
        for root, surfaces in clusters.items()
        for surface in surfaces
    }

    merged = sorted(
        (
            UtteranceRecord(surface_to_canonical[r.speaker], r.text, r.chunk_id, r.ordinal)
            for r in records
        ),
        key=lambda r: (r.chunk_id, r.ordinal),
    )
    alias_map = {
        canonical_of_root[root]: sorted(surfaces | {canonical_of_root[root]})
        for root, surfaces in clusters.items()
        if surfaces or root in forced_by_root
    }
    ambiguous_named = {
        min(norm_surfaces[norm], key=lambda s: (-surface_counts[s], s)): [
            canonical_of_root[root] for root in roots
        ]
        for norm, roots in ambiguous.items()
    }
    return SpeakerMergeReport(merged, alias_map, ambiguous_named)


def utterances_of(records: list[UtteranceRecord], speaker: str) -> list[UtteranceRecord]:
    return [r for r in records if r.speaker == speaker]


def select_relevant_chunks(speaker: str, chunks: list[Chunk], index: HybridIndex,
                           embedder: EmbeddingBackend, k: int, *,
                           records: list[UtteranceRecord],
                           aliases: tuple[str, ...] = ()) -> list[Chunk]:
    """Pick the chunks that matter most for one character.

    Every chunk where the character speaks is always kept, even beyond
    ``k``.  The remaining budget is filled with the best hits for the
    query built from the canonical name and its aliases.  Chunks come
    back in document order.
    """
    if k < 1:
        raise ConfigError("k must be at least 1")
    if len(index) == 0:
        raise ConfigError("chunk index is empty")
    by_doc_id = {chunk_doc_id(c.chunk_id): c for c in chunks}
    forced_ids = {
        chunk_doc_id(r.chunk_id) for r in records if r.speaker == speaker
    } & set(by_doc_id)
    query = " ".join(dict.fromkeys([speaker, *aliases]))
    ranked = search(index, query, embedder)
    selected = set(forced_ids)
    for result in ranked:
        if len(selected) >= max(k, len(forced_ids)):
            break
        selected.add(result.doc_id)
    return sorted(
        (by_doc_id[d] for d in selected if d in by_doc_id), key=lambda c: c.chunk_id
    )


# ---------------------------------------------------------------------------
# JSONL persistence


def _save_jsonl(path: str | Path, rows: list[dict]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n")


def _load_jsonl(path: str | Path) -> list[dict]:
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise StorageError(f"cannot read {path}: {exc}") from exc
    rows = []
    for i, line in enumerate(lines):
        if not line.strip():
            continue
        try:
            rows.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise StorageError(f"bad JSON on line {i + 1} of {path}: {exc}") from exc
    return rows


def save_chunks(path: str | Path, chunks: list[Chunk]) -> None:
    _save_jsonl(path, [asdict(c) for c in chunks])


def load_chunks(path: str | Path) -> list[Chunk]:
    try:
        return [Chunk(**row) for row in _load_jsonl(path)]
    except TypeError as exc:
        raise StorageError(f"bad chunk record in {path}: {exc}") from exc


def save_utterances(path: str | Path, records: list[UtteranceRecord]) -> None:
    _save_jsonl(path, [asdict(r) for r in records])


def load_utterances(path: str | Path) -> list[UtteranceRecord]:
    try:
        return [UtteranceRecord(**row) for row in _load_jsonl(path)]
    except TypeError as exc:
        raise StorageError(f"bad utterance record in {path}: {exc}") from exc
