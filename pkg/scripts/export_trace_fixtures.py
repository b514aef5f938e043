#!/usr/bin/env python3
"""Export deterministic JSON fixtures of live API responses.

Runs the scripted demo persona through a throwaway service instance,
captures real endpoint payloads, then rewrites volatile ids and
timestamps to fixed placeholders so the files are reproducible. The
frontend validates its schemas and renders its snapshot tests against
these fixtures.

Usage: python3 scripts/export_trace_fixtures.py [output_dir]
       (default output_dir: frontend/fixtures)
"""

import json
import sys
import tempfile
from pathlib import Path

from rolecraft import demo
from rolecraft.gateway import (
    HashEmbeddingBackend,
    LlmGateway,
    ScriptedChatBackend,
)
from rolecraft.service import RoleplayService

# One fixture per pipeline shape the UI must render.
CONFIGS = {
    "trace_default": None,
    "trace_memory_off": {"memory_check_enabled": False},
    "trace_style_first": {"style_before_memory": True},
    "trace_summarized": {"summarize_after_memory": True},
    "trace_style_removed": {"style_removal_enabled": True},
}

FIXED_TIME = "2026-01-01T00:00:00+00:00"


def scrub(value, ids: dict):
    """Replace ids and timestamps with stable placeholders, recursively."""
    if isinstance(value, dict):
        out = {}
        for key, item in value.items():
            if key == "session_id":
                out[key] = ids.setdefault(("session", item),
                                          f"fixturesession{len(ids):02d}")
            elif key == "trace_id":
                out[key] = ids.setdefault(("trace", item),
                                          f"fixturetrace{len(ids):02d}")
            elif key in ("created_at", "updated_at"):
                out[key] = FIXED_TIME
            else:
                out[key] = scrub(item, ids)
        return out
    if isinstance(value, list):
        return [scrub(item, ids) for item in value]
    return value


def main(argv: list[str]) -> int:
    out_dir = Path(argv[1]) if len(argv) > 1 else Path("frontend/fixtures")
    out_dir.mkdir(parents=True, exist_ok=True)

    with tempfile.TemporaryDirectory() as tmp:
        demo.install_demo_persona(tmp)
        gateway = LlmGateway(
            ScriptedChatBackend(demo.demo_turn_rules(catch_all=True)),
            HashEmbeddingBackend(dim=demo.DEMO_EMBED_DIM),
        )
        service = RoleplayService(tmp, gateway)

        ids: dict = {}
        fixtures = {
            "personas": service.list_personas(),
            "persona": service.get_persona(demo.DEMO_NAME),
        }
        for name, config in CONFIGS.items():
            session = service.create_session(demo.DEMO_NAME, config)
            fixtures[name] = service.post_message(session["session_id"],
                                                  demo.USER_TURN_1)
            if name == "trace_default":
                fixtures["session"] = service.get_session(session["session_id"])

        for name, payload in fixtures.items():
            path = out_dir / f"{name}.json"
            path.write_text(
                json.dumps(scrub(payload, ids), ensure_ascii=False,
                           indent=2, sort_keys=True) + "\n",
                encoding="utf-8")
            print(f"wrote {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv))
