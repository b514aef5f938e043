"""Character feature extraction: personality, background, speaking style.

The three feature sets stay decoupled on purpose: each is extracted on
its own, saved as its own human-editable file, and can be regenerated or
hand-tuned independently.

Background extraction walks the relevant chunks in order and runs one
consolidation round after every fifth chunk plus one final round for the
remainder, so n chunks always produce exactly ceil(n / 5) consolidation
calls.  Each round's prompt handles the twelve attributes separately
rather than summarizing the notes as one blob.
"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable

from .errors import ConfigError, ParseError, RolecraftError, StorageError
from .gateway import ChatMessage, LlmGateway
from .ingest import AliasMap, Chunk, UtteranceRecord, _chat_with_repair, normalize_name
from .parsing import extract_json_object
from .prompts import render
from .tokenize import is_cjk, terms

BACKGROUND_KEYS = (
    "name",
    "gender",
    "age",
    "ethnicity",
    "identity",
    "occupation",
    "physical_appearance",
    "health_status",
    "family_background",
    "historical_context",
    "key_possessions",
    "interests_hobbies",
)
UNKNOWN = "unknown"

SUMMARIZE_EVERY = 5
DEFAULT_STYLE_SAMPLE = 50
DEFAULT_TOP_WORDS = 20


@dataclass
class PersonalityProfile:
    per_chunk_traits: list[tuple[int, str]]
    synthesized: str


@dataclass
class StyleProfile:
    preferences: str
    common_words: dict[str, list[tuple[str, int]]]


@dataclass
class PersonaBundle:
    canonical_name: str
    personality: PersonalityProfile
    background: dict[str, str]
    style: StyleProfile
    utterances: list[UtteranceRecord]
    alias_map: AliasMap
    language: str = "en"

    @property
    def aliases(self) -> list[str]:
        return [
            a for a in self.alias_map.get(self.canonical_name, [])
            if a != self.canonical_name
        ]


# ---------------------------------------------------------------------------
# Personality


def extract_personality(gateway: LlmGateway, speaker: str, chunks: list[Chunk], *,
                        language: str = "en") -> PersonalityProfile:
    """One brief trait description per chunk, then one synthesis call.

    Chunks that reveal nothing yield an empty description; those are kept
    in the per-chunk list but left out of the synthesis prompt.
    """
    if not chunks:
        raise ConfigError("personality extraction needs at least one chunk")
    per_chunk: list[tuple[int, str]] = []
    for chunk in chunks:
        prompt = render("personality_trait", language, name=speaker, chunk=chunk.text)
        reply = gateway.chat([ChatMessage("user", prompt)], tag="personality_trait")
        per_chunk.append((chunk.chunk_id, reply.strip()))
    observations = "\n".join(
        f"- (passage {cid}) {trait}" for cid, trait in per_chunk if trait
    )
    prompt = render(
        "personality_synthesis", language, name=speaker,
        traits=observations or "(no observations)",
    )
    synthesized = gateway.chat(
        [ChatMessage("user", prompt)], tag="personality_synthesis"
    ).strip()
    if not synthesized:
        raise ParseError("personality synthesis returned an empty reply")
    return PersonalityProfile(per_chunk, synthesized)


# ---------------------------------------------------------------------------
# Background


def _background_keys_block() -> str:
    return "\n".join(f"- {key}" for key in BACKGROUND_KEYS)


def _parse_background(reply: str) -> dict[str, str]:
    data = extract_json_object(reply)
    missing = [k for k in BACKGROUND_KEYS if k not in data]
    if missing:
        raise ParseError(f"background object missing keys: {', '.join(missing)}")
    out: dict[str, str] = {}
    for key in BACKGROUND_KEYS:
        value = data[key]
        if value is None:
            out[key] = UNKNOWN
        elif isinstance(value, (str, int, float)):
            text = str(value).strip()
            out[key] = text if text else UNKNOWN
        else:
            raise ParseError(f"background value for {key!r} is not plain text: {value!r}")
    return out


def extract_background(gateway: LlmGateway, speaker: str, chunks: list[Chunk], *,
                       language: str = "en") -> dict[str, str]:
    """Per-chunk attribute extraction with periodic consolidation.

    Consolidation runs after every :data:`SUMMARIZE_EVERY` chunks and
    once more for any remainder; each round feeds the previous summary
    plus the new partial notes back through the model.
    """
    if not chunks:
        raise ConfigError("background extraction needs at least one chunk")
    keys_block = _background_keys_block()
    running: dict[str, str] | None = None
    pending: list[dict[str, str]] = []

    def consolidate() -> dict[str, str]:
        notes = ([running] if running is not None else []) + pending
        notes_text = "\n".join(json.dumps(note, ensure_ascii=False) for note in notes)
        prompt = render(
            "background_summarize", language, name=speaker,
            keys=keys_block, notes=notes_text,
        )
        return _chat_with_repair(
            gateway, prompt, "background_summarize", _parse_background, language
        )

    for i, chunk in enumerate(chunks):
        prompt = render(
            "background_extract", language, name=speaker,
            keys=keys_block, chunk=chunk.text,
        )
        try:
            partial = _chat_with_repair(
                gateway, prompt, "background_extract", _parse_background, language
            )
        except RolecraftError as exc:
            raise type(exc)(
                f"background extraction failed on chunk {chunk.chunk_id}: {exc.message}"
            ) from exc
        pending.append(partial)
        if (i + 1) % SUMMARIZE_EVERY == 0:
            running = consolidate()
            pending = []
    if pending:
        running = consolidate()
    assert running is not None  # n >= 1 guarantees at least one round
    return {key: running[key] for key in BACKGROUND_KEYS}


# ---------------------------------------------------------------------------
# Style

PosTagger = Callable[[str], str]

_CLOSED_CLASS = {
    "pronoun": (
        "i you he she it we they me him her us them my your his its our their "
        "mine yours hers ours theirs myself yourself himself herself itself "
        "ourselves themselves who whom whose which what this that these those "
        "something nothing anything everything someone anyone everyone nobody"
    ),
    "function": (
        "the a an of in on at by for with to from as and but or nor if then "
        "than because while when where how why not no yes do does did done "
        "have has had having be is are was were been being am will would "
        "shall should can could may might must let there about into over "
        "under out up down off through after before between among against"
    ),
}

_OPEN_CLASS = {
    "noun": (
        "boy girl man woman sir madam lady lord time day night year hand eye "
        "head heart face voice door room house home way word thing name "
        "friend father mother son daughter brother sister child children "
        "people world life death fire water light dark school magic wand "
        "tea office letter book moment breath harm care question answer"
    ),
    "verb": (
        "say said go went gone come came know knew think thought see saw "
        "look looked take took make made get got tell told find found give "
        "gave ask asked seem seemed feel felt leave left put keep kept "
        "speak spoke rest fetch mend draw sit sitting stand stood turn "
        "turned want wanted need needed believe remember forget trust"
    ),
    "adjective": (
        "good great little old young small long own same right wrong safe "
        "dark dead poor happy sad sure dear nasty warm cold soft quiet "
        "gentle kind wise brave afraid strange familiar lasting white black "
        "new many much few certain true whole other last first next"
    ),
    "adverb": (
        "very now then here there again never always quite too so well "
        "perhaps indeed once soon still yet slowly gently only just even "
        "almost rather really away back together alone"
    ),
}

_POS_LEXICON: dict[str, str] = {}
for _cls, _words in (*_CLOSED_CLASS.items(), *_OPEN_CLASS.items()):
    for _w in _words.split():
        _POS_LEXICON[_w] = _cls

_NOUN_SUFFIXES = ("tion", "sion", "ment", "ness", "ance", "ence", "ity", "hood", "ism", "ship")
_ADJ_SUFFIXES = ("ous", "ful", "ive", "able", "ible", "less", "ish")
_VERB_SUFFIXES = ("ize", "ise", "ify")


def default_pos_tagger(word: str) -> str:
    """Lexicon lookup with suffix heuristics; unknown words tag "other"."""
    if word in _POS_LEXICON:
        return _POS_LEXICON[word]
    if any(is_cjk(ch) for ch in word):
        return "other"
    if len(word) > 4 and word.endswith("ly"):
        return "adverb"
    if len(word) > 5 and word.endswith(_NOUN_SUFFIXES):
        return "noun"
    if len(word) > 4 and word.endswith(_ADJ_SUFFIXES):
        return "adjective"
    if len(word) > 4 and word.endswith(_VERB_SUFFIXES):
        return "verb"
    return "other"


def count_common_words(texts: list[str], *, top_m: int = DEFAULT_TOP_WORDS,
                       tagger: PosTagger = default_pos_tagger,
                       ) -> dict[str, list[tuple[str, int]]]:
    """Exact word frequencies over all texts, grouped by word class.

    Within a class, words sort by descending count then alphabetically,
    truncated to ``top_m`` entries.
    """
    counts: Counter[str] = Counter()
    for text in texts:
        counts.update(terms(text))
    by_class: dict[str, list[tuple[str, int]]] = {}
    for word, count in counts.items():
        by_class.setdefault(tagger(word), []).append((word, count))
    return {
        cls: sorted(entries, key=lambda wc: (-wc[1], wc[0]))[:top_m]
        for cls, entries in sorted(by_class.items())
    }


def _style_sample(utterances: list[UtteranceRecord], limit: int) -> list[str]:
    texts = [u.text for u in utterances]
    if len(texts) <= limit:
        return texts
    # Uniform index stride keeps the sample spread over the whole book.
    return [texts[(i * len(texts)) // limit] for i in range(limit)]


def extract_style(gateway: LlmGateway, speaker: str,
                  utterances: list[UtteranceRecord], *, language: str = "en",
                  sample_size: int = DEFAULT_STYLE_SAMPLE,
                  top_m: int = DEFAULT_TOP_WORDS,
                  tagger: PosTagger = default_pos_tagger) -> StyleProfile:
    """LLM style description over a sample; exact word counts over all."""
    if not utterances:
        raise ConfigError("style extraction needs at least one utterance")
    sample = _style_sample(utterances, sample_size)
    prompt = render(
        "style_preferences", language, name=speaker,
        utterances="\n".join(f"- {line}" for line in sample),
    )
    preferences = gateway.chat(
        [ChatMessage("user", prompt)], tag="style_preferences"
    ).strip()
    common = count_common_words([u.text for u in utterances], top_m=top_m, tagger=tagger)
    return StyleProfile(preferences, common)


# ---------------------------------------------------------------------------
# Bundle persistence

_BUNDLE_FILES = ("profile.json", "common_words.json", "utterances.jsonl", "aliases.json")


def persona_slug(name: str) -> str:
    """Directory- and URL-safe identifier for a persona name."""
    normalized = normalize_name(name)
    slug = re.sub(r"[^0-9a-z぀-ヿ㐀-䶿一-鿿가-힯]+",
                  "_", normalized).strip("_")
    if not slug:
        raise ConfigError(f"persona name {name!r} has no usable characters")
    return slug


def _dump_json(path: Path, value) -> None:
    path.write_text(
        json.dumps(value, ensure_ascii=False, indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )


def save_bundle(bundle: PersonaBundle, directory: str | Path) -> None:
    """Write the bundle as pretty-printed, hand-editable files."""
    from .ingest import save_utterances

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    profile = {
        "canonical_name": bundle.canonical_name,
        "language": bundle.language,
        "personality": {
            "per_chunk_traits": [list(pair) for pair in bundle.personality.per_chunk_traits],
            "synthesized": bundle.personality.synthesized,
        },
        "background": {key: bundle.background[key] for key in BACKGROUND_KEYS},
        "style_preferences": bundle.style.preferences,
    }
    _dump_json(directory / "profile.json", profile)
    _dump_json(
        directory / "common_words.json",
        {cls: [list(wc) for wc in entries] for cls, entries in bundle.style.common_words.items()},
    )
    save_utterances(directory / "utterances.jsonl", bundle.utterances)
    _dump_json(directory / "aliases.json", bundle.alias_map)


def load_bundle(directory: str | Path) -> PersonaBundle:
    from .ingest import load_utterances

    directory = Path(directory)
    missing = [name for name in _BUNDLE_FILES if not (directory / name).is_file()]
    if missing:
        raise StorageError(
            f"persona bundle at {directory} is missing: {', '.join(missing)}"
        )

    def _read_json(name: str):
        try:
            return json.loads((directory / name).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise StorageError(f"malformed JSON in {directory / name}: {exc}") from exc

    profile = _read_json("profile.json")
    common_raw = _read_json("common_words.json")
    aliases = _read_json("aliases.json")
    try:
        background_raw = dict(profile["background"])
        unknown_keys = sorted(set(background_raw) - set(BACKGROUND_KEYS))
        if unknown_keys:
            raise StorageError(
                f"unknown background keys in {directory / 'profile.json'}: "
                f"{', '.join(unknown_keys)}"
            )
        background = {
            key: background_raw.get(key, UNKNOWN) for key in BACKGROUND_KEYS
        }
        personality = PersonalityProfile(
            per_chunk_traits=[
                (int(cid), str(text))
                for cid, text in profile["personality"]["per_chunk_traits"]
            ],
            synthesized=profile["personality"]["synthesized"],
        )
        style = StyleProfile(
            preferences=profile["style_preferences"],
            common_words={
                cls: [(str(w), int(c)) for w, c in entries]
                for cls, entries in common_raw.items()
            },
        )
        return PersonaBundle(
            canonical_name=profile["canonical_name"],
            personality=personality,
            background=background,
            style=style,
            utterances=load_utterances(directory / "utterances.jsonl"),
            alias_map={str(k): [str(a) for a in v] for k, v in aliases.items()},
            language=profile.get("language", "en"),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise StorageError(f"bad persona bundle in {directory}: {exc!r}") from exc


def build_persona(gateway: LlmGateway, speaker: str, relevant_chunks: list[Chunk],
                  records: list[UtteranceRecord], alias_map: AliasMap, *,
                  language: str = "en", style_sample: int = DEFAULT_STYLE_SAMPLE,
                  top_m: int = DEFAULT_TOP_WORDS) -> PersonaBundle:
    """Run all three extractions for one speaker and assemble the bundle."""
    own = [r for r in records if r.speaker == speaker]
    if not own:
        raise ConfigError(f"no utterances recorded for speaker {speaker!r}")
    personality = extract_personality(gateway, speaker, relevant_chunks, language=language)
    background = extract_background(gateway, speaker, relevant_chunks, language=language)
    style = extract_style(
        gateway, speaker, own, language=language,
        sample_size=style_sample, top_m=top_m,
    )
    return PersonaBundle(
        canonical_name=speaker,
        personality=personality,
        background=background,
        style=style,
        utterances=own,
        alias_map=alias_map,
        language=language,
    )
