#!/usr/bin/env python3
"""Serve the scripted demo persona over HTTP, fully offline.

Builds a throwaway data root with the demo persona, wires the service
to the scripted chat backend (with a catch-all rule so free-typed
messages get an in-character reply), and runs the API. Used for
frontend development and the frontend's live round-trip test.

Usage: python3 scripts/serve_demo.py [port] [host]
"""

import sys
import tempfile

import uvicorn

from rolecraft import demo
from rolecraft.gateway import (
    HashEmbeddingBackend,
    LlmGateway,
    ScriptedChatBackend,
)
from rolecraft.service import RoleplayService, create_app


def main(argv: list[str]) -> int:
    port = int(argv[1]) if len(argv) > 1 else 8023
    host = argv[2] if len(argv) > 2 else "127.0.0.1"
    with tempfile.TemporaryDirectory() as root:
        demo.install_demo_persona(root)
        gateway = LlmGateway(
            ScriptedChatBackend(demo.demo_turn_rules(catch_all=True)),
            HashEmbeddingBackend(dim=demo.DEMO_EMBED_DIM),
        )
        app = create_app(RoleplayService(root, gateway))
        print(f"demo persona {demo.DEMO_NAME!r} at http://{host}:{port}",
              flush=True)
        uvicorn.run(app, host=host, port=port, log_level="warning")
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv))
