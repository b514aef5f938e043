"""A fully scripted demo persona for offline runs and end-to-end tests.

Everything here forms a closed loop: the scripted chat backend answers
every prompt the pipeline can produce for this persona, so a complete
turn runs with no model behind it and lands on known stage texts.  That
makes the demo double as a replay harness: tests assert the exact
styleless, memory-checked and stylized outputs plus the number of chat
calls each configuration spends.

The persona is Dumbledore from Harry Potter.  His memory graph is built
from a one-paragraph book snippet through the normal extraction path,
also scripted.
"""

from __future__ import annotations

import json
from pathlib import Path

from .gateway import (
    CallLog,
    HashEmbeddingBackend,
    LlmGateway,
    ScriptedChatBackend,
    ScriptedRule,
)
from .ingest import UtteranceRecord, chunk_text
from .memory import MemoryGraph, build_graph, save_graph
from .pipeline import PipelineConfig, RolePlayEngine, build_utterance_index
from .profile import (
    BACKGROUND_KEYS,
    UNKNOWN,
    PersonaBundle,
    PersonalityProfile,
    StyleProfile,
    persona_slug,
    save_bundle,
)

DEMO_NAME = "Albus Dumbledore"
DEMO_EMBED_DIM = 32

USER_TURN_1 = "Ugh, my head hurts. Where am I?"

# --- Stage texts ------------------------------------------------------------
# The memory-checked reply decomposes into four parenthesized actions and
# eight sentences; the stylize script rewrites each sentence and drops the
# last one outright, so reassembly must splice 7 rewritten sentences back
# between the untouched actions.

STYLELESS_ACTIONS = [
    "(You find yourself sitting up slowly, the soft crackle of a nearby fire "
    "the only sound in the quiet room. A warm, familiar voice speaks gently.)",
    "(A long white beard ripples slightly as the speaker nods.)",
]
STYLELESS_SENTENCES = [
    "You are safe, my dear.",
    "In the Headmaster’s office at Hogwarts.",
    "Let me fetch you some tea and a restorative draught.",
    "You’ve had a nasty knock to the head, but no lasting harm—none that "
    "cannot be mended with care and time.",
]

ACTIONS = [
    "(You sit up slowly, the fire crackling softly nearby. A warm, familiar "
    "voice speaks gently.)",
    "(A long white beard ripples slightly as the speaker nods.)",
    "(The eyes twinkle, soft with concern.)",
    "(A gentle hand rests on your shoulder.)",
]
MC_SENTENCES = [
    "You are safe, my dear—here in the Headmaster’s office at Hogwarts.",
    "Let me bring you some tea and a restorative draught.",
    "Minerva found you near the Whomping Willow, and you’ve been unconscious "
    "for hours.",
    "Dark magic stirs again, and the world beyond these walls grows uncertain.",
    "But here, you are safe—for now.",
    "Rest.",
    "I will not let harm come to you.",
    "Not while I still draw breath.",
]
STYLIZED_SENTENCES = [
    "You are quite safe, I assure you—here in my office at Hogwarts.",
    "Let me fetch you some tea and a restorative draught, my dear.",
    "Minerva found you near the Whomping Willow, and you have been "
    "unconscious for some hours.",
    "Dark forces stir once more, and the world beyond these walls grows ever "
    "more uncertain.",
    "But here, you are safe—for now.",
    "Rest now, my dear.",
    "I shall see to it that no harm comes to you — not while I still have "
    "breath in my body.",
    "",  # the last sentence folds into the previous one and is dropped
]


def _assemble(blocks: list[list[str]]) -> str:
    return "\n\n".join(" ".join(part for part in block if part) for block in blocks)


STYLELESS = _assemble([
    [STYLELESS_ACTIONS[0], STYLELESS_SENTENCES[0], STYLELESS_SENTENCES[1]],
    [STYLELESS_ACTIONS[1], STYLELESS_SENTENCES[2], STYLELESS_SENTENCES[3]],
])
MEMORY_CHECKED = _assemble([
    [ACTIONS[0], MC_SENTENCES[0]],
    [ACTIONS[1], MC_SENTENCES[1], MC_SENTENCES[2]],
    [ACTIONS[2], MC_SENTENCES[3], MC_SENTENCES[4]],
    [ACTIONS[3], MC_SENTENCES[5], MC_SENTENCES[6], MC_SENTENCES[7]],
])
STYLIZED = _assemble([
    [ACTIONS[0], STYLIZED_SENTENCES[0]],
    [ACTIONS[1], STYLIZED_SENTENCES[1], STYLIZED_SENTENCES[2]],
    [ACTIONS[2], STYLIZED_SENTENCES[3], STYLIZED_SENTENCES[4]],
    [ACTIONS[3], STYLIZED_SENTENCES[5], STYLIZED_SENTENCES[6]],
])

KEYWORDS = ["Whomping Willow", "Minerva McGonagall", "Headmaster office"]

# --- Persona fixtures -------------------------------------------------------

PERSONALITY_TEXT = (
    "Calm under pressure, endlessly patient, and protective of anyone in his "
    "care. Prefers gentle questions to direct orders, treats small comforts "
    "as serious medicine, and keeps sharp judgment behind mild humor."
)
STYLE_TEXT = (
    "Speaks in long, courteous sentences that open with reassurance and close "
    "with quiet resolve. Often addresses the listener as 'my dear' or 'my "
    "dear boy', softens claims with 'I believe' and 'perhaps', and favors "
    "old-fashioned phrasing over slang."
)
EXEMPLAR_LINES = [
    "I assure you, my dear boy, the castle keeps its own counsel.",
    "A cup of tea, I find, restores more than any charm.",
    "You are quite safe within these walls, I give you my word.",
    "Curious, is it not, how the smallest kindness outshines the grandest spell.",
    "Rest now; the morning will bring wiser questions.",
    "I shall attend to the matter myself, you need not fear.",
]

DEMO_BOOK = (
    "Minerva McGonagall hurried across the dark lawn with her wand raised. "
    "Near the Whomping Willow she found a visitor lying senseless in the "
    "grass, and she carried them up to the castle without waking a soul. The "
    "Headmaster's office glowed warm when she arrived, and Albus Dumbledore "
    "set a kettle over the fire before she had finished her tale."
)

_GRAPH_EXTRACTION = json.dumps({
    "entities": [
        {"name": "Minerva McGonagall",
         "description": "A sharp-eyed teacher who patrols the grounds at night."},
        {"name": "Whomping Willow",
         "description": "A violent magical tree standing on the school grounds."},
        {"name": "Albus Dumbledore",
         "description": "The Headmaster, who receives the rescued visitor in his office."},
    ],
    "relations": [
        {"source": "Minerva McGonagall", "target": "Whomping Willow",
         "label": "searched near",
         "description": "Minerva found the unconscious visitor near the Whomping Willow."},
        {"source": "Minerva McGonagall", "target": "Albus Dumbledore",
         "label": "reported to",
         "description": "Minerva carried the visitor to Dumbledore's office and told him what she found."},
    ],
}, ensure_ascii=False)


def build_demo_bundle() -> PersonaBundle:
    utterances = [
        UtteranceRecord(speaker=DEMO_NAME, text=text, chunk_id=i, ordinal=0)
        for i, text in enumerate(EXEMPLAR_LINES)
    ]
    background = {key: UNKNOWN for key in BACKGROUND_KEYS}
    background.update(
        name="Albus Dumbledore",
        gender="male",
        identity="wizard, mentor, keeper of too many secrets",
        occupation="Headmaster of Hogwarts",
        key_possessions="wand, half-moon spectacles",
    )
    return PersonaBundle(
        canonical_name=DEMO_NAME,
        personality=PersonalityProfile(per_chunk_traits=[(0, "calm and protective")],
                                       synthesized=PERSONALITY_TEXT),
        background=background,
        style=StyleProfile(
            preferences=STYLE_TEXT,
            common_words={
                "noun": [("boy", 5), ("tea", 3), ("castle", 2)],
                "verb": [("assure", 3), ("fetch", 2)],
                "adjective": [("dear", 6), ("quite", 2)],
            },
        ),
        utterances=utterances,
        alias_map={DEMO_NAME: ["albus dumbledore", "dumbledore"]},
        language="en",
    )


def build_demo_graph(embedder=None) -> MemoryGraph:
    embedder = embedder or HashEmbeddingBackend(dim=DEMO_EMBED_DIM)
    backend = ScriptedChatBackend([
        ScriptedRule("Extract entities and relations", _GRAPH_EXTRACTION),
    ])
    chunks = chunk_text(DEMO_BOOK, source_doc="demo")
    return build_graph(LlmGateway(backend, embedder), chunks)


def demo_turn_rules(*, catch_all: bool = False) -> list[ScriptedRule]:
    """Ordered script covering every prompt a demo turn can produce.

    Exact per-sentence stylize rules come first, then identity rules
    that echo any other sentence back, then one rule per remaining
    stage keyed on a phrase unique to its prompt template.  The plain
    first-turn rule sits last because its match text also appears
    inside later prompts.  ``catch_all`` appends a rule answering any
    unknown prompt with the styleless text, for free-typed demo chat.
    """
    rules = [
        ScriptedRule("Sentence: <<<" + mc + ">>>", styled)
        for mc, styled in zip(MC_SENTENCES, STYLIZED_SENTENCES)
    ]
    rules.append(ScriptedRule(
        "Sentences: <<<" + json.dumps(MC_SENTENCES, ensure_ascii=False) + ">>>",
        json.dumps(STYLIZED_SENTENCES, ensure_ascii=False)))
    rules.append(ScriptedRule(r"Sentence: <<<(.*?)>>>", r"\1", regex=True))
    rules.append(ScriptedRule(r"Sentences: <<<(.*?)>>>", r"\1", regex=True))
    rules.append(ScriptedRule("JSON array of 1 to 10",
                              json.dumps(KEYWORDS, ensure_ascii=False)))
    rules.append(ScriptedRule("checking a draft reply from", MEMORY_CHECKED))
    rules.append(ScriptedRule(r"Shorten the reply below.*Reply:\n(.*?)\s*\Z",
                              r"\1", regex=True))
    rules.append(ScriptedRule(r"mannerisms and flourishes.*Reply:\n(.*?)\s*\Z",
                              r"\1", regex=True))
    rules.append(ScriptedRule(USER_TURN_1, STYLELESS))
    if catch_all:
        rules.append(ScriptedRule("", STYLELESS))
    return rules


def dump_demo_script(path: str | Path, *, catch_all: bool = False) -> Path:
    """Write the demo rules as a script file the CLI can load."""
    rows = [
        {"match": r.match, "response": r.response, "regex": r.regex,
         "budget": r.budget}
        for r in demo_turn_rules(catch_all=catch_all)
    ]
    path = Path(path)
    path.write_text(json.dumps(rows, ensure_ascii=False, indent=2) + "\n",
                    encoding="utf-8")
    return path


def build_demo_engine(config: PipelineConfig | None = None, *,
                      catch_all: bool = False,
                      log: CallLog | None = None) -> RolePlayEngine:
    """Engine wired to the scripted backend, ready to run turns offline."""
    embedder = HashEmbeddingBackend(dim=DEMO_EMBED_DIM)
    bundle = build_demo_bundle()
    graph = build_demo_graph(embedder)
    gateway = LlmGateway(ScriptedChatBackend(demo_turn_rules(catch_all=catch_all)),
                         embedder, log=log)
    return RolePlayEngine(
        gateway=gateway,
        bundle=bundle,
        utterance_index=build_utterance_index(bundle.utterances, embedder),
        graph=graph,
        config=config if config is not None else PipelineConfig(),
    )


def install_demo_persona(data_root: str | Path) -> Path:
    """Write the demo persona's bundle and graph under a service data root."""
    persona_dir = Path(data_root) / "personas" / persona_slug(DEMO_NAME)
    save_bundle(build_demo_bundle(), persona_dir)
    save_graph(build_demo_graph(), persona_dir / "memory")
    return persona_dir
