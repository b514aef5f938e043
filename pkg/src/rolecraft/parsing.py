"""Tolerant extraction of JSON values from model replies.

Models wrap JSON in markdown fences or prose more often than not.  The
strategy: try fenced blocks, then the whole reply, then the first
decodable value starting at any ``[`` or ``{``.  Anything less than a
valid JSON value is a :class:`ParseError`; nothing here guesses.
"""

from __future__ import annotations

import json
import re
from typing import Any

from .errors import ParseError

_FENCE_RE = re.compile(r"```[a-zA-Z]*\s*\n?(.*?)```", re.DOTALL)


def extract_json_value(text: str) -> Any:
    """Return the first JSON value found in ``text``."""
    candidates = [m.group(1) for m in _FENCE_RE.finditer(text)]
    candidates.append(text.strip())
    for candidate in candidates:
        try:
            return json.loads(candidate)
        except json.JSONDecodeError:
            pass
    decoder = json.JSONDecoder()
    for pos, ch in enumerate(text):
        if ch in "[{":
            try:
                value, _ = decoder.raw_decode(text, pos)
            except json.JSONDecodeError:
                continue
            return value
    raise ParseError(f"no JSON value in reply starting with {text[:120]!r}")


def extract_json_array(text: str) -> list:
    value = extract_json_value(text)
    if not isinstance(value, list):
        raise ParseError(f"expected a JSON array, got {type(value).__name__}")
    return value


def extract_json_object(text: str) -> dict:
    value = extract_json_value(text)
    if not isinstance(value, dict):
        raise ParseError(f"expected a JSON object, got {type(value).__name__}")
    return value


def extract_string_array(text: str) -> list[str]:
    value = extract_json_array(text)
    for item in value:
        if not isinstance(item, str):
            raise ParseError(f"expected an array of strings, got item {item!r}")
    return value
