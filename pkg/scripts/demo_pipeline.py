#!/usr/bin/env python3
"""Run the bundled demo persona through one chat turn and print the trace.

The demo persona replays a scripted backend, so this works fully
offline and is deterministic. Pass a matching mode to compare how the
stylization stage spends its calls.

Usage: python3 scripts/demo_pipeline.py [simple|parallel|dynamic]
"""

import sys

from rolecraft import demo
from rolecraft.pipeline import MATCHING_MODES, PipelineConfig, trace_to_dict


def banner(title: str) -> None:
    print(f"\n--- {title} " + "-" * max(0, 60 - len(title)))


def main(argv: list[str]) -> int:
    mode = argv[1] if len(argv) > 1 else "dynamic"
    if mode not in MATCHING_MODES:
        print(f"unknown matching mode {mode!r}; pick one of "
              f"{', '.join(MATCHING_MODES)}", file=sys.stderr)
        return 1
    engine = demo.build_demo_engine(PipelineConfig(matching_mode=mode))
    trace = trace_to_dict(engine.run_turn([], demo.USER_TURN_1))

    print(f"persona: {demo.DEMO_NAME}")
    print(f"matching mode: {mode}")
    print(f"stage order: {' -> '.join(trace['stage_order'])}")

    banner("user message")
    print(trace["user_message"])
    banner("stage 1: styleless draft")
    print(trace["styleless"])
    banner("stage 2: memory check")
    print("rewrite keywords:", ", ".join(trace["rewrite_keywords"]))
    for hit in trace["memory_hits"]:
        print(f"  [{hit['kind']}] {hit['text']}  (score {hit['score']:.3f})")
    print()
    print(trace["memory_checked"])
    banner("stage 3: stylized reply")
    for entry in trace["per_segment"]:
        print(f"  segment {entry['position']}: {len(entry['exemplars'])} "
              f"exemplar(s) -> {entry['rewritten']}")
    print()
    print(trace["stylized"])
    banner("accounting")
    for tag, count in trace["call_counts"].items():
        print(f"  {tag}: {count}")
    print(f"  total chat calls: {sum(trace['call_counts'].values())}")
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv))
