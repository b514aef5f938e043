"""Three-stage chat turn engine: plain draft, fact check, restyle.

A turn starts with a styleless draft written from the persona's
personality and background alone.  The draft is then checked against
the book's memory graph: one call rewrites it into search keywords,
retrieval pulls matching facts, and a correction call folds them back
in.  Finally the reply is split into sentences and parenthesized
actions; each sentence is rewritten into the character's voice against
retrieved example lines, while actions pass through byte-identical.

Stages can be toggled or reordered per turn through
:class:`PipelineConfig`, and every run returns a :class:`PipelineTrace`
recording stage outputs, retrieved evidence and per-sentence rewrites.
"""

from __future__ import annotations

import json
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace
from typing import Sequence

from .errors import ConfigError, ParseError, StorageError
from .gateway import ChatMessage, LlmGateway
from .ingest import UtteranceRecord, _chat_with_repair
from .memory import DEFAULT_MEMORY_K, MemoryGraph, MemoryHit, query_memory
from .parsing import extract_string_array
from .profile import BACKGROUND_KEYS, UNKNOWN, PersonaBundle, StyleProfile, default_pos_tagger
from .prompts import render
from .retrieval import HybridIndex, build_index, search, search_progressive
from .tokenize import detect_language, terms

DEFAULT_EXEMPLAR_K = 5
MAX_KEYWORDS = 10
MATCHING_MODES = ("simple", "parallel", "dynamic")

# Stage names as they appear in PipelineTrace.stage_order.
STAGE_STYLELESS = "styleless"
STAGE_STYLE_REMOVAL = "style_removal"
STAGE_MEMORY_CHECK = "memory_check"
STAGE_SUMMARIZE = "summarize"
STAGE_STYLIZE = "stylize"


# ---------------------------------------------------------------------------
# Configuration


@dataclass
class PipelineConfig:
    """Per-session switches for the turn pipeline.

    ``style_before_memory`` swaps stages two and three, so the style
    rewrite runs on the raw draft and the fact check runs last; it only
    makes sense while the memory check is enabled at all.
    """

    memory_check_enabled: bool = True
    style_before_memory: bool = False
    style_removal_enabled: bool = False
    summarize_after_memory: bool = False
    matching_mode: str = "dynamic"
    exemplar_k: int = DEFAULT_EXEMPLAR_K
    memory_k: int = DEFAULT_MEMORY_K
    max_response_sentences: int | None = None

    def validate(self) -> None:
        for name in ("memory_check_enabled", "style_before_memory",
                     "style_removal_enabled", "summarize_after_memory"):
            if not isinstance(getattr(self, name), bool):
                raise ConfigError(f"{name} must be a boolean")
        if self.matching_mode not in MATCHING_MODES:
            raise ConfigError(
                f"matching_mode must be one of {', '.join(MATCHING_MODES)}, "
                f"got {self.matching_mode!r}")
        if self.style_before_memory and not self.memory_check_enabled:
            raise ConfigError("style_before_memory requires memory_check_enabled")
        for name in ("exemplar_k", "memory_k"):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                raise ConfigError(f"{name} must be a positive integer")
        limit = self.max_response_sentences
        if limit is not None and (not isinstance(limit, int)
                                  or isinstance(limit, bool) or limit < 1):
            raise ConfigError("max_response_sentences must be a positive integer or null")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, raw: dict) -> "PipelineConfig":
        if not isinstance(raw, dict):
            raise ConfigError("pipeline config must be an object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError(f"unknown config fields: {', '.join(unknown)}")
        config = cls(**raw)
        config.validate()
        return config


# ---------------------------------------------------------------------------
# Segmentation


@dataclass(frozen=True)
class Segment:
    """One piece of a reply: a sentence to rewrite or an action to keep.

    ``lead`` is the whitespace separating this segment from the previous
    one and ``tail`` the trailing whitespace of the whole text (non-empty
    on the last segment only), so joining ``lead + text + tail`` over the
    list reproduces the source exactly.
    """

    kind: str  # "sentence" | "action"
    text: str
    position: int
    lead: str = ""
    tail: str = ""


_OPENERS = {"(": ")", "（": "）"}
_BRACKET_CLOSERS = frozenset(_OPENERS.values())

# Sentence-final punctuation; the full-width marks end a sentence even
# without following whitespace, the others need whitespace or end-of-text
# so decimals and abbreviations survive.
_HARD_TERMINALS = "。！？"
_SOFT_TERMINALS = ".!?…"
_TERMINALS = _HARD_TERMINALS + _SOFT_TERMINALS
_QUOTE_CLOSERS = "\"'”’»」』"


def _action_spans(text: str) -> list[tuple[int, int]]:
    """Half-open spans of outermost paired brackets; orphans stay literal."""
    stack: list[tuple[int, str]] = []
    pairs: list[tuple[int, int]] = []
    for i, ch in enumerate(text):
        closer = _OPENERS.get(ch)
        if closer is not None:
            stack.append((i, closer))
        elif ch in _BRACKET_CLOSERS:
            # Close the innermost opener of the matching kind; any opener
            # stacked above it can no longer pair and becomes literal.
            for j in range(len(stack) - 1, -1, -1):
                if stack[j][1] == ch:
                    pairs.append((stack[j][0], i + 1))
                    del stack[j:]
                    break
    pairs.sort()
    spans: list[tuple[int, int]] = []
    for start, end in pairs:
        if not spans or start >= spans[-1][1]:
            spans.append((start, end))
    return spans


def _sentence_pieces(text: str, lo: int, hi: int) -> list[tuple[str, int, int]]:
    """Split ``text[lo:hi]`` into sentence spans at terminal punctuation."""
    pieces: list[tuple[str, int, int]] = []
    sent_start: int | None = None
    i = lo
    while i < hi:
        ch = text[i]
        if sent_start is None:
            if not ch.isspace():
                sent_start = i
            else:
                i += 1
                continue
        if ch in _TERMINALS:
            j = i
            while j + 1 < hi and text[j + 1] in _TERMINALS:
                j += 1
            k = j
            while k + 1 < hi and text[k + 1] in _QUOTE_CLOSERS:
                k += 1
            run = text[i:j + 1]
            hard = any(c in _HARD_TERMINALS for c in run)
            after = k + 1
            if hard or after >= hi or text[after].isspace():
                pieces.append(("sentence", sent_start, k + 1))
                sent_start = None
                i = k + 1
                continue
            i = j + 1
            continue
        i += 1
    if sent_start is not None:
        end = hi
        while end > sent_start and text[end - 1].isspace():
            end -= 1
        pieces.append(("sentence", sent_start, end))
    return pieces


def segment_response(text: str) -> list[Segment]:
    """Split a reply into sentence and action segments, losslessly.

    Actions are maximal spans enclosed in paired round brackets (ASCII
    or full-width); unmatched brackets are kept as literal sentence
    text.  Everything between actions is split into sentences at
    terminal punctuation, with trailing closing quotes attached.
    """
    if not text:
        raise ConfigError("cannot segment an empty response")
    pieces: list[tuple[str, int, int]] = []
    cursor = 0
    for start, end in _action_spans(text):
        pieces.extend(_sentence_pieces(text, cursor, start))
        pieces.append(("action", start, end))
        cursor = end
    pieces.extend(_sentence_pieces(text, cursor, len(text)))

    if not pieces:
        # Whitespace-only input; keep it intact as one inert segment.
        return [Segment("sentence", text, 0)]
    segments: list[Segment] = []
    prev_end = 0
    for kind, start, end in pieces:
        segments.append(Segment(kind, text[start:end], len(segments),
                                lead=text[prev_end:start]))
        prev_end = end
    if prev_end < len(text):
        segments[-1] = replace(segments[-1], tail=text[prev_end:])
    return segments


def reconstruct(segments: Sequence[Segment]) -> str:
    """Inverse of :func:`segment_response`."""
    return "".join(s.lead + s.text + s.tail for s in segments)


# ---------------------------------------------------------------------------
# Stage one: styleless draft


def _render_history(history: Sequence[tuple[str, str]], name: str) -> str:
    if not history:
        return "(no previous turns)"
    lines = []
    for user, assistant in history:
        lines.append(f"User: {user}")
        lines.append(f"{name}: {assistant}")
    return "\n".join(lines)


def _background_lines(background: dict[str, str]) -> str:
    lines = []
    for key in BACKGROUND_KEYS:
        label = key.replace("_", " ").capitalize()
        lines.append(f"{label}: {background.get(key, UNKNOWN)}")
    return "\n".join(lines)


def build_system_prompt(bundle: PersonaBundle) -> str:
    """Personality synthesis plus labeled background lines, one prompt."""
    profile = bundle.personality.synthesized.strip() + "\n\n" + _background_lines(bundle.background)
    return render("styleless_system", bundle.language,
                  name=bundle.canonical_name, profile=profile)


def stage1_styleless(gateway: LlmGateway, bundle: PersonaBundle,
                     history: Sequence[tuple[str, str]], user_message: str) -> str:
    """First draft from personality and background only, no styling."""
    messages = [ChatMessage("system", build_system_prompt(bundle))]
    for user, assistant in history:
        messages.append(ChatMessage("user", user))
        messages.append(ChatMessage("assistant", assistant))
    messages.append(ChatMessage("user", user_message))
    return gateway.chat(messages, tag=STAGE_STYLELESS)


# ---------------------------------------------------------------------------
# Stage two: keywords, retrieval, correction


_CAP_RUN_RE = re.compile(r"[A-Z][A-Za-z'’]*(?:[ ][A-Z][A-Za-z'’]*)*")


def _mid_sentence(text: str, start: int) -> bool:
    i = start - 1
    while i >= 0 and text[i].isspace():
        i -= 1
    return i >= 0 and text[i] not in _TERMINALS + "(（\"'“‘"


def fallback_keywords(draft: str, *, limit: int = MAX_KEYWORDS) -> list[str]:
    """Noun-ish search terms scraped from the draft without a model call.

    Capitalized runs that are not sentence-initial come first (they are
    usually names), then lexicon nouns; if neither yields anything the
    first distinct terms are used so the result is never empty.
    """
    picked: list[str] = []
    seen: set[str] = set()

    def add(word: str) -> None:
        word = word.strip()
        if word.endswith(("'s", "’s")):
            word = word[:-2]
        key = word.casefold()
        if key and key not in seen:
            seen.add(key)
            picked.append(word)

    for match in _CAP_RUN_RE.finditer(draft):
        if _mid_sentence(draft, match.start()):
            add(match.group())
        else:
            # Sentence-initial runs start with an ordinary word; the rest
            # of the run ("The Whomping Willow" -> "Whomping Willow") is
            # still likely a name.
            rest = match.group().split(" ", 1)
            if len(rest) == 2:
                add(rest[1])
    for term in terms(draft):
        if default_pos_tagger(term) == "noun":
            add(term)
    if not picked:
        for term in terms(draft):
            add(term)
    if not picked:
        raise ParseError("keyword fallback found no usable terms in the draft")
    return picked[:limit]


def rewrite_query_keywords(gateway: LlmGateway, name: str, draft: str,
                           history: Sequence[tuple[str, str]], user_message: str,
                           *, language: str = "en") -> tuple[list[str], bool]:
    """Keywords naming the draft's checkable claims, plus a fallback flag.

    One model call (with one repair retry) asks for a JSON keyword
    array; if that stays unparseable the keywords are scraped from the
    draft instead and the flag is set.
    """
    if not draft.strip():
        raise ConfigError("cannot rewrite an empty draft into keywords")
    prompt = render("rewrite_query", language, name=name,
                    history=_render_history(history, name),
                    message=user_message, draft=draft)

    def parse(reply: str) -> list[str]:
        words = extract_string_array(reply)
        cleaned = [w.strip() for w in words if w.strip() and terms(w)]
        if not cleaned:
            raise ParseError("keyword array came back empty")
        return cleaned[:MAX_KEYWORDS]

    try:
        return _chat_with_repair(gateway, prompt, "rewrite_query", parse, language), False
    except ParseError:
        return fallback_keywords(draft), True


def stage2_memory_check(gateway: LlmGateway, name: str, draft: str,
                        hits: Sequence[MemoryHit],
                        history: Sequence[tuple[str, str]], user_message: str,
                        *, language: str = "en") -> tuple[str, bool]:
    """Correct the draft against retrieved memories.

    Returns the corrected text and whether a correction call ran; with
    no evidence the draft passes through untouched and no call is spent.
    """
    if not hits:
        return draft, False
    memories = "\n".join(f"- {hit.text}" for hit in hits)
    prompt = render("memory_check", language, name=name, memories=memories,
                    history=_render_history(history, name),
                    message=user_message, draft=draft)
    return gateway.chat([ChatMessage("user", prompt)], tag=STAGE_MEMORY_CHECK), True


def summarize_reply(gateway: LlmGateway, draft: str, *, language: str = "en") -> str:
    """One call shortening an overlong draft while keeping its facts."""
    prompt = render("summarize_response", language, draft=draft)
    return gateway.chat([ChatMessage("user", prompt)], tag="summarize_response")


def remove_style(gateway: LlmGateway, draft: str, *, language: str = "en") -> str:
    """One call neutralizing residual register in the draft."""
    prompt = render("style_removal", language, draft=draft)
    return gateway.chat([ChatMessage("user", prompt)], tag=STAGE_STYLE_REMOVAL)


# ---------------------------------------------------------------------------
# Stage three: stylize


@dataclass(frozen=True)
class SegmentRewrite:
    """Log entry for one rewritten sentence segment."""

    position: int
    exemplars: tuple[str, ...]
    rewritten: str


def build_utterance_index(utterances: Sequence[UtteranceRecord],
                          embedder, **kwargs) -> HybridIndex:
    """Hybrid index over a persona's recorded lines, one doc per line."""
    docs = [(f"utt:{i:06d}", u.text) for i, u in enumerate(utterances)]
    return build_index(docs, embedder, **kwargs)


def _style_block(style: StyleProfile) -> str:
    parts = []
    if style.preferences.strip():
        parts.append(style.preferences.strip())
    word_bits = []
    for word_class in sorted(style.common_words):
        words = [w for w, _ in style.common_words[word_class][:8]]
        if words:
            word_bits.append(f"{word_class}: " + ", ".join(words))
    if word_bits:
        parts.append("Frequent words " + "; ".join(word_bits))
    return "\n".join(parts) if parts else "(no style notes recorded)"


def _render_exemplars(exemplars: tuple[str, ...]) -> str:
    if not exemplars:
        return "(no recorded lines)"
    return "\n".join(f"- {text}" for text in exemplars)


def _retrieve(index: HybridIndex, embedder, query: str, k: int) -> tuple[str, ...]:
    if len(index) == 0 or not terms(query):
        return ()
    return tuple(r.text for r in search(index, query, embedder, k=k))


def _retrieve_progressive(index: HybridIndex, embedder, prefix: str,
                          segment: str, k: int) -> tuple[str, ...]:
    if len(index) == 0 or not terms(segment):
        return ()
    return tuple(r.text for r in search_progressive(index, prefix, segment,
                                                    embedder, k=k))


def _truncate(segments: list[Segment], limit: int) -> tuple[list[Segment], int]:
    kept: list[Segment] = []
    count = 0
    for segment in segments:
        kept.append(segment)
        if segment.kind == "sentence" and segment.text.strip():
            count += 1
            if count >= limit:
                break
    return kept, len(segments) - len(kept)


def stage3_stylize(gateway: LlmGateway, bundle: PersonaBundle,
                   utterance_index: HybridIndex, text: str,
                   config: PipelineConfig,
                   ) -> tuple[str, list[Segment], list[SegmentRewrite], list[str]]:
    """Rewrite sentences into the persona's voice; actions pass through.

    Returns the stylized text, the segmentation it worked on, one log
    entry per rewritten sentence, and any warnings.  A sentence whose
    rewrite comes back empty is dropped together with its separator.
    """
    notes: list[str] = []
    segments = segment_response(text)
    if config.max_response_sentences is not None:
        segments, dropped = _truncate(segments, config.max_response_sentences)
        if dropped:
            notes.append(
                f"reply truncated to {config.max_response_sentences} sentences "
                f"({dropped} segments cut)")
    if len(utterance_index) == 0:
        notes.append("no recorded utterances available; stylizing without exemplars")

    sentences = [s for s in segments if s.kind == "sentence" and s.text.strip()]
    style = _style_block(bundle.style)
    name = bundle.canonical_name
    language = bundle.language
    k = config.exemplar_k
    embedder = gateway.embedding_backend

    rewritten: dict[int, str] = {}
    per_segment: list[SegmentRewrite] = []

    if sentences and config.matching_mode == "simple":
        block = [s.text for s in sentences]
        exemplars = _retrieve(utterance_index, embedder, " ".join(block), k)
        prompt = render("stylize_simple", language, name=name, style=style,
                        exemplars=_render_exemplars(exemplars),
                        sentences=json.dumps(block, ensure_ascii=False))

        def parse(reply: str) -> list[str]:
            out = extract_string_array(reply)
            if len(out) != len(block):
                raise ParseError(
                    f"expected {len(block)} rewritten sentences, got {len(out)}")
            return out

        outputs = _chat_with_repair(gateway, prompt, STAGE_STYLIZE, parse, language)
        for segment, output in zip(sentences, outputs):
            rewritten[segment.position] = output
            per_segment.append(SegmentRewrite(segment.position, exemplars, output))

    elif sentences and config.matching_mode == "parallel":
        def rewrite_one(segment: Segment) -> tuple[int, tuple[str, ...], str]:
            exemplars = _retrieve(utterance_index, embedder, segment.text, k)
            prompt = render("stylize_sentence", language, name=name, style=style,
                            exemplars=_render_exemplars(exemplars),
                            sentence=segment.text)
            output = gateway.chat([ChatMessage("user", prompt)], tag=STAGE_STYLIZE)
            return segment.position, exemplars, output

        with ThreadPoolExecutor(max_workers=min(8, len(sentences))) as pool:
            results = list(pool.map(rewrite_one, sentences))
        for position, exemplars, output in results:
            rewritten[position] = output
            per_segment.append(SegmentRewrite(position, exemplars, output))

    elif sentences:  # dynamic
        prefix_parts: list[str] = []
        for segment in sentences:
            prefix = " ".join(prefix_parts)
            exemplars = _retrieve_progressive(utterance_index, embedder,
                                              prefix, segment.text, k)
            prompt = render("stylize_dynamic", language, name=name, style=style,
                            exemplars=_render_exemplars(exemplars),
                            prefix=prefix if prefix else "(nothing yet)",
                            sentence=segment.text)
            output = gateway.chat([ChatMessage("user", prompt)], tag=STAGE_STYLIZE)
            rewritten[segment.position] = output
            per_segment.append(SegmentRewrite(segment.position, exemplars, output))
            if output.strip():
                prefix_parts.append(output.strip())

    parts: list[str] = []
    for segment in segments:
        if segment.kind == "action" or not segment.text.strip():
            parts.append(segment.lead + segment.text + segment.tail)
            continue
        output = rewritten.get(segment.position, segment.text).strip()
        if not output:
            continue
        parts.append(segment.lead + output + segment.tail)
    stylized = "".join(parts)
    if not stylized.strip():
        notes.append("every sentence was dropped in rewriting; keeping the unstyled draft")
        stylized = text
    return stylized, segments, per_segment, notes


# ---------------------------------------------------------------------------
# Trace


@dataclass
class PipelineTrace:
    """Everything one turn produced, stage by stage.

    Fields for a disabled stage stay ``None`` and are omitted from the
    serialized form, so consumers can render panels by key presence.
    """

    user_message: str
    reply: str
    stage_order: list[str]
    matching_mode: str
    styleless: str
    persona_prompt: str = ""
    rewrite_keywords: list[str] | None = None
    keyword_fallback: bool = False
    memory_hits: list[MemoryHit] | None = None
    memory_checked: str | None = None
    summarized: str | None = None
    style_removed: str | None = None
    segments: list[Segment] = field(default_factory=list)
    per_segment: list[SegmentRewrite] = field(default_factory=list)
    stylized: str = ""
    call_counts: dict[str, int] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)


def trace_to_dict(trace: PipelineTrace) -> dict:
    """JSON-ready form of a trace; disabled-stage fields are left out."""
    out: dict = {
        "user_message": trace.user_message,
        "reply": trace.reply,
        "stage_order": list(trace.stage_order),
        "matching_mode": trace.matching_mode,
        "styleless": trace.styleless,
        "persona_prompt": trace.persona_prompt,
        "keyword_fallback": trace.keyword_fallback,
        "segments": [
            {"kind": s.kind, "text": s.text, "position": s.position,
             "lead": s.lead, "tail": s.tail}
            for s in trace.segments
        ],
        "per_segment": [
            {"position": p.position, "exemplars": list(p.exemplars),
             "rewritten": p.rewritten}
            for p in trace.per_segment
        ],
        "stylized": trace.stylized,
        "call_counts": dict(trace.call_counts),
        "notes": list(trace.notes),
    }
    if trace.rewrite_keywords is not None:
        out["rewrite_keywords"] = list(trace.rewrite_keywords)
    if trace.memory_hits is not None:
        out["memory_hits"] = [
            {"kind": h.kind, "text": h.text, "score": h.score,
             "provenance": list(h.provenance)}
            for h in trace.memory_hits
        ]
    if trace.memory_checked is not None:
        out["memory_checked"] = trace.memory_checked
    if trace.summarized is not None:
        out["summarized"] = trace.summarized
    if trace.style_removed is not None:
        out["style_removed"] = trace.style_removed
    return out


def trace_from_dict(raw: dict) -> PipelineTrace:
    """Inverse of :func:`trace_to_dict`; raises StorageError on bad shape."""
    try:
        hits = None
        if "memory_hits" in raw:
            hits = [
                MemoryHit(h["kind"], h["text"], float(h["score"]),
                          tuple(int(c) for c in h["provenance"]))
                for h in raw["memory_hits"]
            ]
        return PipelineTrace(
            user_message=raw["user_message"],
            reply=raw["reply"],
            stage_order=list(raw["stage_order"]),
            matching_mode=raw["matching_mode"],
            styleless=raw["styleless"],
            persona_prompt=str(raw.get("persona_prompt", "")),
            rewrite_keywords=(list(raw["rewrite_keywords"])
                              if "rewrite_keywords" in raw else None),
            keyword_fallback=bool(raw.get("keyword_fallback", False)),
            memory_hits=hits,
            memory_checked=raw.get("memory_checked"),
            summarized=raw.get("summarized"),
            style_removed=raw.get("style_removed"),
            segments=[
                Segment(s["kind"], s["text"], int(s["position"]),
                        s.get("lead", ""), s.get("tail", ""))
                for s in raw["segments"]
            ],
            per_segment=[
                SegmentRewrite(int(p["position"]), tuple(p["exemplars"]),
                               p["rewritten"])
                for p in raw["per_segment"]
            ],
            stylized=raw["stylized"],
            call_counts={str(k): int(v) for k, v in raw["call_counts"].items()},
            notes=list(raw["notes"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise StorageError(f"malformed trace record: {exc}") from exc


# ---------------------------------------------------------------------------
# Engine


@dataclass
class RolePlayEngine:
    """Binds one persona bundle, its indexes and a gateway into a turn runner.

    The engine never mutates the history it is given; callers append
    ``(user_message, trace.reply)`` themselves once a turn succeeds, so
    a failed turn cannot corrupt session state.
    """

    gateway: LlmGateway
    bundle: PersonaBundle
    utterance_index: HybridIndex
    graph: MemoryGraph | None = None
    config: PipelineConfig = field(default_factory=PipelineConfig)

    def __post_init__(self):
        self.config.validate()
        if self.config.memory_check_enabled and self.graph is None:
            raise ConfigError("memory checking is enabled but no memory graph is loaded")

    def run_turn(self, history: Sequence[tuple[str, str]], user_message: str,
                 config: PipelineConfig | None = None) -> PipelineTrace:
        """Run one full turn and return its trace.

        ``config`` overrides the engine default for this turn only.  The
        reply to show the user is ``trace.reply``: the output of
        whichever stage ran last under the configured order.
        """
        cfg = config if config is not None else self.config
        cfg.validate()
        if cfg.memory_check_enabled and self.graph is None:
            raise ConfigError("memory checking is enabled but no memory graph is loaded")
        if not user_message.strip():
            raise ConfigError("user message is empty")
        history = [(u, a) for u, a in history]

        log = self.gateway.log
        calls_before = len(log.calls(kind="chat"))
        notes: list[str] = []
        name = self.bundle.canonical_name
        language = self.bundle.language

        styleless = stage1_styleless(self.gateway, self.bundle, history, user_message)
        stage_order = [STAGE_STYLELESS]
        draft = styleless

        style_removed: str | None = None
        if cfg.style_removal_enabled:
            if detect_language(draft) != "en":
                notes.append("style removal ran on non-Latin text; treat the result with care")
            draft = remove_style(self.gateway, draft, language=language)
            style_removed = draft
            stage_order.append(STAGE_STYLE_REMOVAL)

        keywords: list[str] | None = None
        fallback = False
        hits: list[MemoryHit] | None = None
        memory_checked: str | None = None
        summarized: str | None = None
        stylized = ""
        segments: list[Segment] = []
        per_segment: list[SegmentRewrite] = []

        def memory_stage(current: str) -> str:
            nonlocal keywords, fallback, hits, memory_checked, summarized
            keywords, fallback = rewrite_query_keywords(
                self.gateway, name, current, history, user_message, language=language)
            if fallback:
                notes.append("keyword rewriting was unparseable; fell back to draft nouns")
            hits = query_memory(self.gateway, self.graph, keywords, cfg.memory_k)
            checked, corrected = stage2_memory_check(
                self.gateway, name, current, hits, history, user_message,
                language=language)
            if not corrected:
                notes.append("no memories retrieved; draft kept unchanged")
            memory_checked = checked
            out = checked
            stage_order.append(STAGE_MEMORY_CHECK)
            if cfg.summarize_after_memory:
                out = summarize_reply(self.gateway, out, language=language)
                summarized = out
                stage_order.append(STAGE_SUMMARIZE)
            return out

        def style_stage(current: str) -> str:
            nonlocal stylized, segments, per_segment
            stylized, segments, per_segment, style_notes = stage3_stylize(
                self.gateway, self.bundle, self.utterance_index, current, cfg)
            notes.extend(style_notes)
            stage_order.append(STAGE_STYLIZE)
            return stylized

        if not cfg.memory_check_enabled:
            reply = style_stage(draft)
        elif cfg.style_before_memory:
            reply = memory_stage(style_stage(draft))
        else:
            reply = style_stage(memory_stage(draft))

        call_counts: dict[str, int] = {}
        for call in log.calls(kind="chat")[calls_before:]:
            call_counts[call.tag] = call_counts.get(call.tag, 0) + 1

        return PipelineTrace(
            user_message=user_message,
            reply=reply,
            stage_order=stage_order,
            matching_mode=cfg.matching_mode,
            styleless=styleless,
            persona_prompt=build_system_prompt(self.bundle),
            rewrite_keywords=keywords,
            keyword_fallback=fallback,
            memory_hits=hits,
            memory_checked=memory_checked,
            summarized=summarized,
            style_removed=style_removed,
            segments=segments,
            per_segment=per_segment,
            stylized=stylized,
            call_counts=call_counts,
            notes=notes,
        )
