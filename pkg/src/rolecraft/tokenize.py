"""Tokenization helpers shared by chunking, retrieval and prompt routing.

Chunking needs token *offsets* so chunk boundaries can be mapped back to
exact character spans.  Retrieval needs normalized *terms*.  Both use the
same convention: runs of non-space characters form one token, except that
every CJK codepoint is its own token (CJK text has no word spacing, and
one character per token keeps chunk sizes comparable across languages).
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Callable

# Han, Hiragana/Katakana, Hangul, CJK punctuation-free blocks only.
_CJK_RANGES = (
    (0x3040, 0x30FF),
    (0x3400, 0x4DBF),
    (0x4E00, 0x9FFF),
    (0xAC00, 0xD7AF),
    (0xF900, 0xFAFF),
)

_CJK_CLASS = "".join(f"{chr(a)}-{chr(b)}" for a, b in _CJK_RANGES)
_TOKEN_RE = re.compile(f"[{_CJK_CLASS}]|[^\\s{_CJK_CLASS}]+")
_TERM_RE = re.compile(f"[{_CJK_CLASS}]|[0-9A-Za-z_']+")
_LATIN_RE = re.compile(r"[A-Za-z]")
_CJK_RE = re.compile(f"[{_CJK_CLASS}]")


def is_cjk(ch: str) -> bool:
    cp = ord(ch)
    return any(a <= cp <= b for a, b in _CJK_RANGES)


@dataclass(frozen=True)
class Token:
    """One token with its character span in the source text."""

    text: str
    start: int
    end: int


TokenizerFn = Callable[[str], list[Token]]


def tokenize(text: str) -> list[Token]:
    """Split ``text`` into offset-carrying tokens.

    Whitespace separates tokens; each CJK codepoint is a token of its own
    even with no surrounding space.
    """
    return [Token(m.group(), m.start(), m.end()) for m in _TOKEN_RE.finditer(text)]


def count_tokens(text: str) -> int:
    return sum(1 for _ in _TOKEN_RE.finditer(text))


def terms(text: str) -> list[str]:
    """Normalized terms for lexical matching.

    Lowercased alphanumeric runs (apostrophes kept so contractions stay
    whole) plus individual CJK codepoints.  Punctuation is dropped.
    """
    out: list[str] = []
    for m in _TERM_RE.finditer(text.lower()):
        out.append(m.group().strip("'"))
    return [t for t in out if t]


def detect_language(text: str, default: str = "en") -> str:
    """Guess the dominant language tag of ``text`` by character class.

    Counts CJK codepoints against Latin letters and returns ``"zh"`` or
    ``"en"`` by simple majority.  Ties and texts with neither class fall
    back to ``default``.  The scheme is deliberately coarse: it only has
    to route prompt templates, not attribute text precisely.
    """
    cjk = len(_CJK_RE.findall(text))
    latin = len(_LATIN_RE.findall(text))
    if cjk > latin:
        return "zh"
    if latin > cjk:
        return "en"
    return default
