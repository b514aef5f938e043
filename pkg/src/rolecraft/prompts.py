"""Prompt template loading and rendering.

Templates are plain text files under ``templates/<language>/<name>.txt``
so they can be edited without touching code.  Placeholders look like
``{history}``: lowercase identifiers in braces.  Only placeholders are
substituted; every other brace (for example JSON examples inside a
template) passes through untouched.  A placeholder with no value
provided is an error, which catches template and call-site typos early.

Missing languages fall back to English file by file, so a partial
translation still works.
"""

from __future__ import annotations

import re
from pathlib import Path

from .errors import ConfigError

TEMPLATE_ROOT = Path(__file__).resolve().parent / "templates"
DEFAULT_LANGUAGE = "en"

_PLACEHOLDER_RE = re.compile(r"\{([a-z][a-z0-9_]*)\}")


def template_path(name: str, language: str = DEFAULT_LANGUAGE) -> Path:
    """Resolve a template file, falling back to English when untranslated."""
    candidate = TEMPLATE_ROOT / language / f"{name}.txt"
    if candidate.is_file():
        return candidate
    fallback = TEMPLATE_ROOT / DEFAULT_LANGUAGE / f"{name}.txt"
    if fallback.is_file():
        return fallback
    raise ConfigError(f"no template named {name!r} for language {language!r}")


def available_templates(language: str = DEFAULT_LANGUAGE) -> list[str]:
    directory = TEMPLATE_ROOT / language
    if not directory.is_dir():
        return []
    return sorted(p.stem for p in directory.glob("*.txt"))


def render(template: str, language: str = DEFAULT_LANGUAGE, /, **values: str) -> str:
    """Render a template; the first two arguments are positional-only so
    placeholders may use any keyword, including ``name`` or ``template``."""
    text = template_path(template, language).read_text(encoding="utf-8")

    def _sub(match: re.Match[str]) -> str:
        key = match.group(1)
        if key not in values:
            raise ConfigError(f"template {template!r} needs a value for {{{key}}}")
        return str(values[key])

    return _PLACEHOLDER_RE.sub(_sub, text)
