"""Command line entry points: ingest, extract, chat, serve, judge.

Configuration comes from an optional JSON file plus flags; flags win.
Every command exits nonzero on failure after printing one line of the
form ``ERR:<code>: <message>`` to stderr.
"""

from __future__ import annotations

import argparse
import json
import socket
import sys
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError, RolecraftError, StorageError
from .gateway import (
    HashEmbeddingBackend,
    HttpBackendConfig,
    HttpChatBackend,
    HttpEmbeddingBackend,
    LlmGateway,
    ScriptedChatBackend,
)
from .ingest import (
    build_chunk_index,
    chunk_text,
    extract_dialogues,
    load_chunks,
    load_utterances,
    merge_speakers,
    save_chunks,
    save_utterances,
    select_relevant_chunks,
)
from .judge import load_sample_file, run_tournament
from .memory import build_graph, load_graph, save_graph
from .pipeline import (
    PipelineConfig,
    RolePlayEngine,
    build_utterance_index,
    trace_to_dict,
)
from .profile import build_persona, load_bundle, persona_slug, save_bundle
from .service import RoleplayService, create_app

DEFAULT_PORT = 8023
DEFAULT_TOP_CHUNKS = 20


@dataclass
class CliConfig:
    """Everything a command needs beyond its own flags."""

    data_root: Path = Path("rolecraft_data")
    backend_url: str | None = None
    model: str = "default"
    api_key: str | None = None
    script: Path | None = None
    embedding_dim: int = 64
    language: str = "en"
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)


_CONFIG_KEYS = {"data_root", "backend_url", "model", "api_key", "script",
                "embedding_dim", "language", "pipeline"}


def load_cli_config(args: argparse.Namespace) -> CliConfig:
    cfg = CliConfig()
    if args.config is not None:
        path = Path(args.config)
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
        unknown = sorted(set(raw) - _CONFIG_KEYS)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        if "data_root" in raw:
            cfg.data_root = Path(str(raw["data_root"]))
        if "backend_url" in raw and raw["backend_url"] is not None:
            cfg.backend_url = str(raw["backend_url"])
        if "model" in raw:
            cfg.model = str(raw["model"])
        if "api_key" in raw and raw["api_key"] is not None:
            cfg.api_key = str(raw["api_key"])
        if "script" in raw and raw["script"] is not None:
            cfg.script = Path(str(raw["script"]))
        if "embedding_dim" in raw:
            if isinstance(raw["embedding_dim"], bool) or \
                    not isinstance(raw["embedding_dim"], int):
                raise ConfigError("embedding_dim must be an integer")
            cfg.embedding_dim = raw["embedding_dim"]
        if "language" in raw:
            cfg.language = str(raw["language"])
        if "pipeline" in raw:
            cfg.pipeline = PipelineConfig.from_dict(raw["pipeline"])
    if args.data_root is not None:
        cfg.data_root = Path(args.data_root)
    if args.backend_url is not None:
        cfg.backend_url = args.backend_url
    if args.model is not None:
        cfg.model = args.model
    return cfg


def build_gateway(cfg: CliConfig) -> LlmGateway:
    if cfg.script is not None:
        return LlmGateway(ScriptedChatBackend.from_json_file(cfg.script),
                          HashEmbeddingBackend(dim=cfg.embedding_dim))
    if cfg.backend_url is not None:
        http = HttpBackendConfig(base_url=cfg.backend_url, model=cfg.model,
                                 api_key=cfg.api_key)
        return LlmGateway(HttpChatBackend(http), HttpEmbeddingBackend(http))
    raise ConfigError("no chat backend configured: pass --backend-url or put "
                      "a script path in the config file")


# ---------------------------------------------------------------------------
# ingest


def _book_store(cfg: CliConfig, book_name: str) -> Path:
    return cfg.data_root / "books" / persona_slug(Path(book_name).stem)


def cmd_ingest(args: argparse.Namespace, cfg: CliConfig) -> int:
    book = Path(args.book)
    try:
        text = book.read_text(encoding="utf-8")
    except OSError as exc:
        raise StorageError(f"cannot read book {book}: {exc}") from exc
    aliases = None
    if args.aliases is not None:
        try:
            aliases = json.loads(Path(args.aliases).read_text(encoding="utf-8"))
        except OSError as exc:
            raise StorageError(f"cannot read aliases {args.aliases}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"aliases file is not valid JSON: {exc}") from exc

    gateway = build_gateway(cfg)
    chunks = chunk_text(text, chunk_size=args.chunk_size, source_doc=book.name)
    records = extract_dialogues(gateway, chunks, language=cfg.language)
    report = merge_speakers(records, aliases)
    for name, rivals in sorted(report.ambiguous.items()):
        print(f"warning: speaker {name!r} matches several names: "
              f"{', '.join(rivals)}", file=sys.stderr)

    store = _book_store(cfg, book.name)
    store.mkdir(parents=True, exist_ok=True)
    save_chunks(store / "chunks.jsonl", chunks)
    save_utterances(store / "utterances.jsonl", report.records)
    (store / "aliases.json").write_text(
        json.dumps(report.alias_map, ensure_ascii=False, indent=2,
                   sort_keys=True) + "\n",
        encoding="utf-8")
    speakers = sorted({r.speaker for r in report.records})
    print(f"chunks: {len(chunks)}")
    print(f"utterances: {len(report.records)}")
    print(f"speakers: {len(speakers)}")
    print(f"store: {store}")
    return 0


# ---------------------------------------------------------------------------
# extract


def cmd_extract(args: argparse.Namespace, cfg: CliConfig) -> int:
    store = _book_store(cfg, args.book)
    chunks = load_chunks(store / "chunks.jsonl")
    records = load_utterances(store / "utterances.jsonl")
    try:
        alias_map = json.loads((store / "aliases.json").read_text(encoding="utf-8"))
    except OSError as exc:
        raise StorageError(f"cannot read {store / 'aliases.json'}: {exc}") from exc

    character = args.character
    speakers = sorted({r.speaker for r in records})
    if character not in speakers:
        sample = ", ".join(speakers[:15])
        raise ConfigError(f"unknown character {character!r}; known speakers: {sample}")

    gateway = build_gateway(cfg)
    embedder = gateway.embedding_backend
    index = build_chunk_index(chunks, embedder)
    relevant = select_relevant_chunks(
        character, chunks, index, embedder, args.top_chunks,
        records=records,
        aliases=tuple(alias_map.get(character, [])))
    bundle = build_persona(gateway, character, relevant, records, alias_map,
                           language=cfg.language)
    persona_dir = cfg.data_root / "personas" / persona_slug(character)
    save_bundle(bundle, persona_dir)
    graph = build_graph(gateway, chunks, language=cfg.language)
    save_graph(graph, persona_dir / "memory")
    for warning in graph.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    print(f"persona: {persona_dir}")
    print(f"utterances: {len(bundle.utterances)}")
    print(f"entities: {len(graph.entities)}")
    print(f"relations: {len(graph.relations)}")
    return 0


# ---------------------------------------------------------------------------
# chat


def _parse_config_value(raw: str):
    lowered = raw.strip().lower()
    if lowered in ("on", "true", "yes"):
        return True
    if lowered in ("off", "false", "no"):
        return False
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def cmd_chat(args: argparse.Namespace, cfg: CliConfig) -> int:
    persona_dir = cfg.data_root / "personas" / persona_slug(args.persona)
    bundle = load_bundle(persona_dir)
    graph_dir = persona_dir / "memory"
    graph = load_graph(graph_dir) if (graph_dir / "manifest.json").is_file() else None

    config = cfg.pipeline
    if args.no_memory_check:
        config = PipelineConfig.from_dict(
            {**config.to_dict(), "memory_check_enabled": False,
             "style_before_memory": False})
    if graph is None and config.memory_check_enabled:
        raise ConfigError(f"persona {args.persona!r} has no memory graph; "
                          "run with --no-memory-check")

    gateway = build_gateway(cfg)
    engine = RolePlayEngine(
        gateway=gateway,
        bundle=bundle,
        utterance_index=build_utterance_index(bundle.utterances,
                                              gateway.embedding_backend),
        graph=graph,
        config=config,
    )
    name = bundle.canonical_name
    history: list[tuple[str, str]] = []
    last_trace = None
    print(f"chatting with {name}; /trace, /config, /quit")
    while True:
        try:
            line = input("you> ")
        except EOFError:
            break
        line = line.strip()
        if not line:
            continue
        if line == "/quit":
            break
        if line == "/trace":
            if last_trace is None:
                print("no turns yet")
            else:
                print(json.dumps(trace_to_dict(last_trace), ensure_ascii=False,
                                 indent=2))
            continue
        if line.startswith("/config"):
            parts = line.split(maxsplit=2)
            if len(parts) == 1:
                print(json.dumps(config.to_dict(), ensure_ascii=False, indent=2))
                continue
            if len(parts) != 3:
                print("usage: /config <field> <value>", file=sys.stderr)
                continue
            _, key, value = parts
            try:
                config = PipelineConfig.from_dict(
                    {**config.to_dict(), key: _parse_config_value(value)})
            except RolecraftError as exc:
                print(f"ERR:{exc.code}: {exc.message}", file=sys.stderr)
                continue
            print(f"config updated: {key}")
            continue
        try:
            trace = engine.run_turn(history, line, config)
        except RolecraftError as exc:
            print(f"ERR:{exc.code}: {exc.message}", file=sys.stderr)
            continue
        last_trace = trace
        history.append((line, trace.reply))
        print(f"{name}> {trace.reply}")
    return 0


# ---------------------------------------------------------------------------
# serve


def build_service(cfg: CliConfig) -> RoleplayService:
    return RoleplayService(cfg.data_root, build_gateway(cfg),
                           default_config=cfg.pipeline)


def cmd_serve(args: argparse.Namespace, cfg: CliConfig) -> int:
    app = create_app(build_service(cfg))
    probe = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    try:
        probe.bind((args.host, args.port))
    except OSError as exc:
        raise ConfigError(f"cannot bind {args.host}:{args.port}: {exc}") from exc
    finally:
        probe.close()
    import uvicorn

    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


# ---------------------------------------------------------------------------
# judge


def _format_mean(value) -> str:
    return "-" if value is None else f"{value:.2f}"


def cmd_judge(args: argparse.Namespace, cfg: CliConfig) -> int:
    samples_dir = Path(args.samples)
    files = sorted(samples_dir.glob("*.json"))
    if not files:
        raise ConfigError(f"no .json sample files in {samples_dir}")
    samples = [s for f in files for s in load_sample_file(f)]
    gateway = build_gateway(cfg)
    report = run_tournament(gateway, samples, language=cfg.language)
    for warning in report["warnings"]:
        print(f"warning: {warning}", file=sys.stderr)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(report, ensure_ascii=False, indent=2,
                              sort_keys=True) + "\n", encoding="utf-8")
    for method in report["methods"]:
        row = report["means"][method]
        print(f"{method}: cp={_format_mean(row['cp'])} "
              f"ak={_format_mean(row['ak'])} qc={_format_mean(row['qc'])} "
              f"pairs={row['pairs']}")
    print(f"report: {out}")
    return 0


# ---------------------------------------------------------------------------
# wiring


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rolecraft",
        description="Turn a book into a chattable character.")
    parser.add_argument("--config", metavar="PATH",
                        help="JSON config file; flags override it")
    parser.add_argument("--data-root", metavar="PATH",
                        help="directory holding books, personas, and sessions")
    parser.add_argument("--backend-url", metavar="URL",
                        help="OpenAI-compatible chat/embeddings endpoint")
    parser.add_argument("--model", metavar="NAME",
                        help="model name sent to the backend")
    commands = parser.add_subparsers(dest="command", required=True,
                                     metavar="command")

    ingest = commands.add_parser(
        "ingest", help="chunk a book and extract speaker-tagged dialogue")
    ingest.add_argument("book", help="path to a plain-text book")
    ingest.add_argument("--aliases", metavar="PATH",
                        help="JSON map of canonical name to alias list")
    ingest.add_argument("--chunk-size", type=int, default=512,
                        metavar="N", help="tokens per chunk (default 512)")

    extract = commands.add_parser(
        "extract", help="build persona profile and memory for one character")
    extract.add_argument("character", help="speaker name as found by ingest")
    extract.add_argument("--book", required=True, metavar="NAME",
                         help="book name used at ingest time")
    extract.add_argument("--top-chunks", type=int, default=DEFAULT_TOP_CHUNKS,
                         metavar="K",
                         help=f"relevant chunks to keep (default {DEFAULT_TOP_CHUNKS})")

    chat = commands.add_parser(
        "chat", help="talk to an extracted persona in the terminal")
    chat.add_argument("persona", help="persona name")
    chat.add_argument("--no-memory-check", action="store_true",
                      help="skip the memory-check stage")

    serve = commands.add_parser("serve", help="run the HTTP service")
    serve.add_argument("--host", default="127.0.0.1", metavar="HOST",
                       help="bind address (default 127.0.0.1)")
    serve.add_argument("--port", type=int, default=DEFAULT_PORT, metavar="PORT",
                       help=f"bind port (default {DEFAULT_PORT})")

    judge = commands.add_parser(
        "judge", help="score dialogue samples pairwise with a judge model")
    judge.add_argument("--samples", required=True, metavar="DIR",
                       help="directory of JSON dialogue-sample files")
    judge.add_argument("--out", default="report.json", metavar="PATH",
                       help="where to write the JSON report (default report.json)")

    return parser


_COMMANDS = {
    "ingest": cmd_ingest,
    "extract": cmd_extract,
    "chat": cmd_chat,
    "serve": cmd_serve,
    "judge": cmd_judge,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_cli_config(args)
        return _COMMANDS[args.command](args, cfg)
    except RolecraftError as exc:
        print(f"ERR:{exc.code}: {exc.message}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - keep the exit contract
        print(f"ERR:internal: {exc!r}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
