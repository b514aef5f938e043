"""Persona and chat session service with an HTTP JSON API.

State lives as plain JSON files under a data root: one directory per
persona, one file per session, one file per stored turn trace.  A fresh
service over the same data root reproduces every session history, so
restarts are free.  Each session processes one turn at a time; rapid
posts to the same session queue behind a per-session lock.
"""

from __future__ import annotations

import json
import threading
import uuid
from datetime import datetime, timezone
from pathlib import Path

from fastapi import Body, FastAPI
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse

from .errors import ConfigError, NotFoundError, RolecraftError, StorageError
from .gateway import LlmGateway
from .memory import MemoryGraph, load_graph
from .pipeline import (
    PipelineConfig,
    RolePlayEngine,
    build_utterance_index,
    trace_to_dict,
)
from .profile import (
    BACKGROUND_KEYS,
    PersonaBundle,
    PersonalityProfile,
    StyleProfile,
    load_bundle,
    persona_slug,
    save_bundle,
)

FORMAT_VERSION = 1

# HTTP status per error code; anything unlisted is a 500.
_STATUS = {
    "config": 400,
    "not_found": 404,
    "parse": 502,
    "backend": 502,
    "script_miss": 502,
    "budget_exceeded": 502,
}


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _write_json(path: Path, doc: dict) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(doc, ensure_ascii=False, indent=2, sort_keys=True) + "\n",
                   encoding="utf-8")
    tmp.replace(path)


def _read_json(path: Path, what: str) -> dict:
    if not path.is_file():
        raise NotFoundError(f"no {what} at {path.name!r}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise StorageError(f"cannot read {what} file {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise StorageError(f"{what} file {path} does not hold an object")
    return doc


# ---------------------------------------------------------------------------
# Editable persona view


def bundle_view(bundle: PersonaBundle) -> dict:
    return {
        "name": bundle.canonical_name,
        "language": bundle.language,
        "personality": {
            "synthesized": bundle.personality.synthesized,
            "per_chunk_traits": [list(p) for p in bundle.personality.per_chunk_traits],
        },
        "background": dict(bundle.background),
        "style_preferences": bundle.style.preferences,
        "common_words": {cls: [list(wc) for wc in entries]
                         for cls, entries in bundle.style.common_words.items()},
        "aliases": {k: list(v) for k, v in bundle.alias_map.items()},
        "utterance_count": len(bundle.utterances),
    }


_READ_ONLY_KEYS = {"utterance_count", "slug", "has_memory"}
_EDITABLE_KEYS = {"name", "language", "personality", "background",
                  "style_preferences", "common_words", "aliases"}


def _require_text(value, label: str) -> str:
    if not isinstance(value, str) or not value.strip():
        raise ConfigError(f"{label} must be a non-empty string")
    return value


def apply_bundle_edit(bundle: PersonaBundle, body: dict) -> PersonaBundle:
    """Merge an edited persona view onto an existing bundle.

    Utterances are data, not profile, so they pass through untouched.
    """
    if not isinstance(body, dict):
        raise ConfigError("persona edit body must be a JSON object")
    unknown = set(body) - _EDITABLE_KEYS - _READ_ONLY_KEYS
    if unknown:
        raise ConfigError(f"unknown persona fields: {', '.join(sorted(unknown))}")
    if "name" in body and body["name"] != bundle.canonical_name:
        raise ConfigError("renaming a persona is not supported")

    language = bundle.language
    if "language" in body:
        language = _require_text(body["language"], "language")

    personality = bundle.personality
    if "personality" in body:
        raw = body["personality"]
        if not isinstance(raw, dict) or set(raw) - {"synthesized", "per_chunk_traits"}:
            raise ConfigError("personality must be an object with 'synthesized' "
                              "and optionally 'per_chunk_traits'")
        synthesized = _require_text(raw.get("synthesized"), "personality.synthesized")
        traits = personality.per_chunk_traits
        if "per_chunk_traits" in raw:
            try:
                traits = [(int(cid), _require_text(text, "trait text"))
                          for cid, text in raw["per_chunk_traits"]]
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad per_chunk_traits: {exc}") from exc
        personality = PersonalityProfile(traits, synthesized)

    background = dict(bundle.background)
    if "background" in body:
        raw = body["background"]
        if not isinstance(raw, dict):
            raise ConfigError("background must be an object")
        bad_keys = set(raw) - set(BACKGROUND_KEYS)
        if bad_keys:
            raise ConfigError(f"unknown background keys: {', '.join(sorted(bad_keys))}")
        for key, value in raw.items():
            background[key] = _require_text(value, f"background.{key}")

    style = bundle.style
    preferences = style.preferences
    common_words = style.common_words
    if "style_preferences" in body:
        preferences = _require_text(body["style_preferences"], "style_preferences")
    if "common_words" in body:
        raw = body["common_words"]
        if not isinstance(raw, dict):
            raise ConfigError("common_words must map word classes to [word, count] lists")
        rebuilt = {}
        try:
            for cls, entries in raw.items():
                rebuilt[_require_text(cls, "word class")] = [
                    (_require_text(word, "common word"), int(count))
                    for word, count in entries]
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad common_words: {exc}") from exc
        if any(count < 1 for entries in rebuilt.values() for _, count in entries):
            raise ConfigError("common word counts must be positive")
        common_words = rebuilt
    if preferences is not style.preferences or common_words is not style.common_words:
        style = StyleProfile(preferences, common_words)

    alias_map = bundle.alias_map
    if "aliases" in body:
        raw = body["aliases"]
        if not isinstance(raw, dict):
            raise ConfigError("aliases must map canonical names to alias lists")
        try:
            alias_map = {_require_text(k, "alias key"):
                         [_require_text(a, "alias") for a in v]
                         for k, v in raw.items()}
        except TypeError as exc:
            raise ConfigError(f"bad aliases: {exc}") from exc

    return PersonaBundle(
        canonical_name=bundle.canonical_name,
        personality=personality,
        background=background,
        style=style,
        utterances=bundle.utterances,
        alias_map=alias_map,
        language=language,
    )


# ---------------------------------------------------------------------------
# Service core


class RoleplayService:
    """File-backed persona, session, and trace operations."""

    def __init__(self, data_root: str | Path, gateway: LlmGateway,
                 default_config: PipelineConfig | None = None):
        self.data_root = Path(data_root)
        self.gateway = gateway
        self.default_config = default_config or PipelineConfig()
        self.default_config.validate()
        self.personas_dir = self.data_root / "personas"
        self.sessions_dir = self.data_root / "sessions"
        self.traces_dir = self.data_root / "traces"
        for directory in (self.personas_dir, self.sessions_dir, self.traces_dir):
            directory.mkdir(parents=True, exist_ok=True)
        self._locks: dict[str, threading.Lock] = {}
        self._locks_guard = threading.Lock()
        self._parts: dict[str, tuple] = {}
        self._parts_guard = threading.Lock()

    # -- personas ----------------------------------------------------------

    def list_personas(self) -> list[dict]:
        rows = []
        for directory in sorted(self.personas_dir.iterdir()):
            if not (directory / "profile.json").is_file():
                continue
            bundle = load_bundle(directory)
            rows.append({
                "name": bundle.canonical_name,
                "slug": directory.name,
                "language": bundle.language,
                "utterance_count": len(bundle.utterances),
                "has_memory": self._graph_dir(directory.name) is not None,
            })
        return rows

    def _persona_dir(self, name: str) -> Path:
        directory = self.personas_dir / persona_slug(name)
        if not (directory / "profile.json").is_file():
            raise NotFoundError(f"no persona named {name!r}")
        return directory

    def _graph_dir(self, slug: str) -> Path | None:
        candidate = self.personas_dir / slug / "memory"
        return candidate if (candidate / "manifest.json").is_file() else None

    def get_persona(self, name: str) -> dict:
        directory = self._persona_dir(name)
        view = bundle_view(load_bundle(directory))
        view["slug"] = directory.name
        view["has_memory"] = self._graph_dir(directory.name) is not None
        return view

    def update_persona(self, name: str, body: dict) -> dict:
        directory = self._persona_dir(name)
        merged = apply_bundle_edit(load_bundle(directory), body)
        save_bundle(merged, directory)
        with self._parts_guard:
            self._parts.pop(directory.name, None)
        return self.get_persona(name)

    # -- engine assembly ---------------------------------------------------

    def _engine_parts(self, slug: str) -> tuple[PersonaBundle, object, MemoryGraph | None]:
        with self._parts_guard:
            cached = self._parts.get(slug)
        if cached is not None:
            return cached
        bundle = load_bundle(self.personas_dir / slug)
        index = build_utterance_index(bundle.utterances,
                                      self.gateway.embedding_backend)
        graph_dir = self._graph_dir(slug)
        graph = load_graph(graph_dir) if graph_dir else None
        parts = (bundle, index, graph)
        with self._parts_guard:
            self._parts[slug] = parts
        return parts

    def _engine(self, slug: str, config: PipelineConfig) -> RolePlayEngine:
        bundle, index, graph = self._engine_parts(slug)
        return RolePlayEngine(gateway=self.gateway, bundle=bundle,
                              utterance_index=index, graph=graph, config=config)

    # -- sessions ----------------------------------------------------------

    def _session_path(self, session_id: str) -> Path:
        return self.sessions_dir / f"{session_id}.json"

    def _lock_for(self, session_id: str) -> threading.Lock:
        with self._locks_guard:
            return self._locks.setdefault(session_id, threading.Lock())

    def create_session(self, persona_name: str,
                       config: dict | None = None) -> dict:
        directory = self._persona_dir(persona_name)
        pipeline_config = (PipelineConfig.from_dict(config) if config
                           else self.default_config)
        if pipeline_config.memory_check_enabled and \
                self._graph_dir(directory.name) is None:
            raise ConfigError(
                f"persona {persona_name!r} has no memory graph; create the "
                "session with memory_check_enabled=false")
        bundle = load_bundle(directory)
        now = _now()
        record = {
            "format_version": FORMAT_VERSION,
            "session_id": uuid.uuid4().hex[:12],
            "persona": bundle.canonical_name,
            "persona_slug": directory.name,
            "config": pipeline_config.to_dict(),
            "created_at": now,
            "updated_at": now,
            "history": [],
        }
        _write_json(self._session_path(record["session_id"]), record)
        return record

    def get_session(self, session_id: str) -> dict:
        record = _read_json(self._session_path(session_id), "session")
        if record.get("format_version") != FORMAT_VERSION:
            raise StorageError(f"session {session_id} has an unsupported format")
        return record

    def post_message(self, session_id: str, text: str) -> dict:
        if not isinstance(text, str) or not text.strip():
            raise ConfigError("message text must be a non-empty string")
        with self._lock_for(session_id):
            record = self.get_session(session_id)
            config = PipelineConfig.from_dict(record["config"])
            engine = self._engine(record["persona_slug"], config)
            history = [(h["user"], h["assistant"]) for h in record["history"]]
            trace = engine.run_turn(history, text)
            trace_id = uuid.uuid4().hex[:16]
            turn_index = len(record["history"])
            _write_json(self.traces_dir / f"{trace_id}.json", {
                "format_version": FORMAT_VERSION,
                "trace_id": trace_id,
                "session_id": session_id,
                "turn_index": turn_index,
                "created_at": _now(),
                "trace": trace_to_dict(trace),
            })
            record["history"].append({
                "user": text,
                "assistant": trace.reply,
                "trace_id": trace_id,
            })
            record["updated_at"] = _now()
            _write_json(self._session_path(session_id), record)
        return {
            "session_id": session_id,
            "trace_id": trace_id,
            "turn_index": turn_index,
            "reply": trace.reply,
            "trace": trace_to_dict(trace),
        }

    # -- traces ------------------------------------------------------------

    def get_trace(self, trace_id: str) -> dict:
        doc = _read_json(self.traces_dir / f"{trace_id}.json", "trace")
        if doc.get("format_version") != FORMAT_VERSION:
            raise StorageError(f"trace {trace_id} has an unsupported format")
        return doc

    def trace_for_turn(self, session_id: str, turn_index: int) -> dict:
        record = self.get_session(session_id)
        try:
            entry = record["history"][turn_index]
        except IndexError:
            raise NotFoundError(
                f"session {session_id} has no turn {turn_index}") from None
        return self.get_trace(entry["trace_id"])


# ---------------------------------------------------------------------------
# HTTP layer


def create_app(service: RoleplayService) -> FastAPI:
    app = FastAPI(title="rolecraft", docs_url=None, redoc_url=None,
                  openapi_url=None)

    @app.exception_handler(RolecraftError)
    async def _engine_error(request, exc: RolecraftError):
        return JSONResponse(status_code=_STATUS.get(exc.code, 500),
                            content={"code": exc.code, "message": exc.message})

    @app.exception_handler(RequestValidationError)
    async def _body_error(request, exc: RequestValidationError):
        return JSONResponse(status_code=400,
                            content={"code": "config",
                                     "message": "malformed request body"})

    @app.get("/healthz")
    def healthz() -> dict:
        return {"status": "ok"}

    @app.get("/personas")
    def list_personas() -> list[dict]:
        return service.list_personas()

    @app.get("/personas/{name}")
    def get_persona(name: str) -> dict:
        return service.get_persona(name)

    @app.put("/personas/{name}")
    def update_persona(name: str, body: dict = Body(...)) -> dict:
        return service.update_persona(name, body)

    @app.post("/sessions", status_code=201)
    def create_session(body: dict = Body(...)) -> dict:
        persona = body.get("persona")
        if not isinstance(persona, str) or not persona.strip():
            raise ConfigError("body must name a persona")
        config = body.get("config")
        if config is not None and not isinstance(config, dict):
            raise ConfigError("config must be an object when given")
        extra = set(body) - {"persona", "config"}
        if extra:
            raise ConfigError(f"unknown session fields: {', '.join(sorted(extra))}")
        return service.create_session(persona, config)

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str) -> dict:
        return service.get_session(session_id)

    @app.post("/sessions/{session_id}/messages")
    def post_message(session_id: str, body: dict = Body(...)) -> dict:
        extra = set(body) - {"text"}
        if extra:
            raise ConfigError(f"unknown message fields: {', '.join(sorted(extra))}")
        return service.post_message(session_id, body.get("text"))

    @app.get("/traces/{trace_id}")
    def get_trace(trace_id: str) -> dict:
        return service.get_trace(trace_id)

    return app
