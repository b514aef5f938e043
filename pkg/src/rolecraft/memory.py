"""Whole-book graph memory with hybrid retrieval on top.

One graph per book, not per character.  Build walks every chunk through
the model once, extracting entities and relations; same-name entities
(and same source/target/label relations) merge, with their per-chunk
descriptions deduplicated and joined in chunk order, so the merged
description is a pure function of the extractions.  Entities, relations
and raw chunks all land in one hybrid index; a query therefore competes
fine-grained facts against full passages and normalizes scores over the
whole pool.

Querying adds one hop of graph expansion: the top direct hits seed a
bonus of half the seed's score onto every neighbor (entity to incident
relation and relation to endpoint entity), so a strongly matched
relation pulls its endpoints above unrelated items.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError, ParseError, StorageError
from .gateway import EmbeddingBackend, LlmGateway
from .ingest import (
    Chunk,
    _chat_with_repair,
    _load_jsonl,
    _save_jsonl,
    load_chunks,
    normalize_name,
    save_chunks,
)
from .parsing import extract_json_object
from .prompts import render
from .retrieval import HybridIndex, build_index, load_index, save_index, search

FORMAT_VERSION = 1
EXPANSION_BONUS = 0.5
DEFAULT_MEMORY_K = 8


@dataclass
class EntityNode:
    entity_id: str
    name: str
    description: str
    source_chunk_ids: list[int]


@dataclass
class RelationEdge:
    edge_id: str
    src: str
    dst: str
    label: str
    description: str
    source_chunk_ids: list[int]


@dataclass(frozen=True)
class MemoryHit:
    kind: str  # entity | relation | chunk
    text: str
    score: float
    provenance: tuple[int, ...]

    @property
    def first_chunk_id(self) -> int:
        """Earliest source chunk; lets callers order hits chronologically."""
        return min(self.provenance)


@dataclass
class MemoryGraph:
    entities: dict[str, EntityNode]
    relations: dict[str, RelationEdge]
    chunks: list[Chunk]
    index: HybridIndex
    warnings: list[str] = field(default_factory=list)

    def entity_by_name(self, name: str) -> EntityNode | None:
        key = normalize_name(name)
        for node in self.entities.values():
            if normalize_name(node.name) == key:
                return node
        return None


# ---------------------------------------------------------------------------
# Build


def _parse_graph_items(reply: str) -> tuple[list[dict], list[dict]]:
    data = extract_json_object(reply)
    entities = data.get("entities")
    relations = data.get("relations")
    if not isinstance(entities, list) or not isinstance(relations, list):
        raise ParseError("graph reply needs 'entities' and 'relations' lists")
    for item in entities:
        if (
            not isinstance(item, dict)
            or not isinstance(item.get("name"), str)
            or not item["name"].strip()
            or not isinstance(item.get("description"), str)
        ):
            raise ParseError(f"bad entity item {item!r}")
    for item in relations:
        if (
            not isinstance(item, dict)
            or not isinstance(item.get("source"), str)
            or not item["source"].strip()
            or not isinstance(item.get("target"), str)
            or not item["target"].strip()
            or not isinstance(item.get("description"), str)
        ):
            raise ParseError(f"bad relation item {item!r}")
    return entities, relations


@dataclass
class _EntityDraft:
    surfaces: list[str] = field(default_factory=list)
    descriptions: list[str] = field(default_factory=list)
    chunk_ids: list[int] = field(default_factory=list)


def _canonical_surface(surfaces: list[str]) -> str:
    from collections import Counter

    counts = Counter(surfaces)
    return min(counts, key=lambda s: (-counts[s], s))


def _merge_descriptions(descriptions: list[str]) -> str:
    """Deduplicate in first-seen order and join; deterministic by design."""
    seen: dict[str, None] = {}
    for d in descriptions:
        d = " ".join(d.split())
        if d and d not in seen:
            seen[d] = None
    return " ".join(seen)


def entity_hit_text(name: str, description: str) -> str:
    return f"{name}: {description}" if description else name


def relation_hit_text(src: str, dst: str, label: str, description: str) -> str:
    head = f"{src} -[{label}]-> {dst}" if label else f"{src} -> {dst}"
    return f"{head}: {description}" if description else head


def chunk_doc_id(chunk_id: int) -> str:
    return f"chunk:{chunk_id:06d}"


def build_graph(gateway: LlmGateway, chunks: list[Chunk], *,
                language: str = "en") -> MemoryGraph:
    """Extract a memory graph from every chunk of the book.

    Chunks whose extraction stays unparseable after one repair are
    skipped with a warning; the build only fails when nothing at all
    could be extracted.
    """
    if not chunks:
        raise ConfigError("graph build needs at least one chunk")

    entity_drafts: dict[str, _EntityDraft] = {}
    relation_rows: list[tuple[str, str, str, str, int]] = []
    warnings: list[str] = []
    any_success = False

    for chunk in chunks:
        prompt = render("graph_extract", language, chunk=chunk.text)
        try:
            entities, relations = _chat_with_repair(
                gateway, prompt, "graph_extract", _parse_graph_items, language
            )
        except ParseError as exc:
            warnings.append(f"chunk {chunk.chunk_id}: extraction skipped ({exc})")
            continue
        any_success = True
        for item in entities:
            key = normalize_name(item["name"])
            draft = entity_drafts.setdefault(key, _EntityDraft())
            draft.surfaces.append(item["name"].strip())
            draft.descriptions.append(item["description"])
            draft.chunk_ids.append(chunk.chunk_id)
        for item in relations:
            relation_rows.append(
                (
                    item["source"].strip(),
                    item["target"].strip(),
                    str(item.get("label", "") or "").strip(),
                    item["description"],
                    chunk.chunk_id,
                )
            )

    if not entity_drafts and not relation_rows:
        detail = "every chunk failed" if not any_success else "every extraction came back empty"
        raise ParseError(f"graph build failed: {detail}")

    # Relations may name entities never described on their own; give those
    # a stub node so every edge endpoint exists.
    for src, dst, _label, _desc, chunk_id in relation_rows:
        for name in (src, dst):
            key = normalize_name(name)
            draft = entity_drafts.setdefault(key, _EntityDraft())
            if not draft.surfaces:
                draft.surfaces.append(name)
            if chunk_id not in draft.chunk_ids:
                draft.chunk_ids.append(chunk_id)

    entities: dict[str, EntityNode] = {}
    id_by_norm: dict[str, str] = {}
    for ordinal, key in enumerate(sorted(entity_drafts)):
        draft = entity_drafts[key]
        entity_id = f"e{ordinal:05d}"
        id_by_norm[key] = entity_id
        entities[entity_id] = EntityNode(
            entity_id=entity_id,
            name=_canonical_surface(draft.surfaces),
            description=_merge_descriptions(draft.descriptions),
            source_chunk_ids=sorted(set(draft.chunk_ids)),
        )

    edge_drafts: dict[tuple[str, str, str], _EntityDraft] = {}
    for src, dst, label, desc, chunk_id in relation_rows:
        key = (id_by_norm[normalize_name(src)], id_by_norm[normalize_name(dst)],
               label.casefold())
        draft = edge_drafts.setdefault(key, _EntityDraft())
        draft.surfaces.append(label)
        draft.descriptions.append(desc)
        draft.chunk_ids.append(chunk_id)

    relations: dict[str, RelationEdge] = {}
    for ordinal, key in enumerate(sorted(edge_drafts)):
        src_id, dst_id, _ = key
        draft = edge_drafts[key]
        edge_id = f"r{ordinal:05d}"
        labels = [s for s in draft.surfaces if s]
        relations[edge_id] = RelationEdge(
            edge_id=edge_id,
            src=src_id,
            dst=dst_id,
            label=_canonical_surface(labels) if labels else "",
            description=_merge_descriptions(draft.descriptions),
            source_chunk_ids=sorted(set(draft.chunk_ids)),
        )

    index = _build_graph_index(entities, relations, chunks, gateway.embedding_backend)
    return MemoryGraph(entities, relations, list(chunks), index, warnings)


def _build_graph_index(entities: dict[str, EntityNode],
                       relations: dict[str, RelationEdge], chunks: list[Chunk],
                       embedder: EmbeddingBackend) -> HybridIndex:
    docs: list[tuple[str, str]] = []
    for entity_id in sorted(entities):
        node = entities[entity_id]
        docs.append((f"entity:{entity_id}", entity_hit_text(node.name, node.description)))
    for edge_id in sorted(relations):
        edge = relations[edge_id]
        docs.append(
            (
                f"relation:{edge_id}",
                relation_hit_text(
                    entities[edge.src].name, entities[edge.dst].name,
                    edge.label, edge.description,
                ),
            )
        )
    for chunk in chunks:
        docs.append((chunk_doc_id(chunk.chunk_id), chunk.text))
    return build_index(docs, embedder)


# ---------------------------------------------------------------------------
# Query


def _adjacency(graph: MemoryGraph) -> dict[str, list[str]]:
    """Doc-id adjacency: entity <-> incident relation, one hop."""
    adj: dict[str, list[str]] = {}
    for edge_id, edge in graph.relations.items():
        rel_doc = f"relation:{edge_id}"
        for entity_id in {edge.src, edge.dst}:
            ent_doc = f"entity:{entity_id}"
            adj.setdefault(rel_doc, []).append(ent_doc)
            adj.setdefault(ent_doc, []).append(rel_doc)
    return adj


def query_memory(gateway: LlmGateway, graph: MemoryGraph, keywords: list[str],
                 k: int = DEFAULT_MEMORY_K) -> list[MemoryHit]:
    """Top-k memory items for a keyword set, with 1-hop graph expansion.

    Direct scores come from one hybrid search with the joined keywords.
    Each of the top-k direct hits then donates ``EXPANSION_BONUS`` times
    its score to its graph neighbors; final ranking is by boosted score,
    ties by doc id.
    """
    if not keywords or not any(kw.strip() for kw in keywords):
        raise ConfigError("query_memory needs at least one keyword")
    if k < 1:
        raise ConfigError("k must be at least 1")
    if len(graph.index) == 0:
        raise ConfigError("memory graph is empty")

    query = " ".join(kw.strip() for kw in keywords if kw.strip())
    ranked = search(graph.index, query, gateway.embedding_backend)
    direct = {r.doc_id: r.score for r in ranked}
    seeds = ranked[:k]

    adjacency = _adjacency(graph)
    bonus: dict[str, float] = {}
    for seed in seeds:
        for neighbor in adjacency.get(seed.doc_id, []):
            bonus[neighbor] = max(bonus.get(neighbor, 0.0), EXPANSION_BONUS * seed.score)

    final = {doc_id: direct[doc_id] + bonus.get(doc_id, 0.0) for doc_id in direct}
    order = sorted(final, key=lambda d: (-final[d], d))[:k]

    texts = dict(zip(graph.index.doc_ids, graph.index.texts))
    hits: list[MemoryHit] = []
    for doc_id in order:
        kind, _, rest = doc_id.partition(":")
        if kind == "entity":
            provenance = tuple(graph.entities[rest].source_chunk_ids)
        elif kind == "relation":
            provenance = tuple(graph.relations[rest].source_chunk_ids)
        else:
            provenance = (int(rest),)
        hits.append(MemoryHit(kind, texts[doc_id], final[doc_id], provenance))
    return hits


# ---------------------------------------------------------------------------
# Persistence


def save_graph(graph: MemoryGraph, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "manifest.json").write_text(
        json.dumps(
            {
                "format_version": FORMAT_VERSION,
                "entities": len(graph.entities),
                "relations": len(graph.relations),
                "chunks": len(graph.chunks),
                "warnings": sorted(graph.warnings),
            },
            ensure_ascii=False, indent=2, sort_keys=True,
        )
        + "\n",
        encoding="utf-8",
    )
    _save_jsonl(
        directory / "entities.jsonl",
        [
            {
                "entity_id": e.entity_id,
                "name": e.name,
                "description": e.description,
                "source_chunk_ids": e.source_chunk_ids,
            }
            for _, e in sorted(graph.entities.items())
        ],
    )
    _save_jsonl(
        directory / "relations.jsonl",
        [
            {
                "edge_id": r.edge_id,
                "src": r.src,
                "dst": r.dst,
                "label": r.label,
                "description": r.description,
                "source_chunk_ids": r.source_chunk_ids,
            }
            for _, r in sorted(graph.relations.items())
        ],
    )
    save_chunks(directory / "chunks.jsonl", graph.chunks)
    save_index(graph.index, directory / "index")


def load_graph(directory: str | Path) -> MemoryGraph:
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise StorageError(f"cannot read {manifest_path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise StorageError(f"malformed manifest {manifest_path}: {exc}") from exc
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise StorageError(
            f"graph format version {version!r} unsupported (expected {FORMAT_VERSION})"
        )
    try:
        entities = {
            row["entity_id"]: EntityNode(
                row["entity_id"], row["name"], row["description"],
                list(row["source_chunk_ids"]),
            )
            for row in _load_jsonl(directory / "entities.jsonl")
        }
        relations = {
            row["edge_id"]: RelationEdge(
                row["edge_id"], row["src"], row["dst"], row["label"],
                row["description"], list(row["source_chunk_ids"]),
            )
            for row in _load_jsonl(directory / "relations.jsonl")
        }
    except KeyError as exc:
        raise StorageError(f"graph records in {directory} missing field {exc}") from exc
    chunks = load_chunks(directory / "chunks.jsonl")
    index = load_index(directory / "index")
    warnings = [str(w) for w in manifest.get("warnings", [])]
    return MemoryGraph(entities, relations, chunks, index, warnings)
