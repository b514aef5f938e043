"""Pairwise dialogue scoring with mirrored judge positions.

Two dialogue samples for the same character are shown to a judge model
side by side, once in each order, and the per-sample scores are averaged
across the two orders so that position bias cancels out.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from statistics import fmean

from .errors import ConfigError, EvaluationError, ParseError, StorageError
from .gateway import ChatMessage, LlmGateway
from .parsing import extract_json_object
from .prompts import render

JUDGE_TEMPERATURE = 0.2
JUDGE_TOP_P = 0.8
METRICS = ("cp", "ak", "qc")


@dataclass(frozen=True)
class DialogueSample:
    """A finished multi-turn conversation produced by one method."""

    character_name: str
    turns: tuple[tuple[str, str], ...]
    method_label: str

    def __post_init__(self) -> None:
        if not self.character_name.strip():
            raise ConfigError("dialogue sample needs a character name")
        if not self.method_label.strip():
            raise ConfigError("dialogue sample needs a method label")
        if not self.turns:
            raise ConfigError("dialogue sample needs at least one turn")


@dataclass(frozen=True)
class JudgeScore:
    """Persona consistency, knowledge accuracy, and conversation quality."""

    cp: float
    ak: float
    qc: float

    def __post_init__(self) -> None:
        for metric in METRICS:
            value = getattr(self, metric)
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ParseError(f"judge score {metric}={value!r} is not a number")
            if not 0 <= value <= 10:
                raise ParseError(f"judge score {metric}={value!r} outside 0..10")


def score_to_dict(score: JudgeScore) -> dict:
    return {metric: getattr(score, metric) for metric in METRICS}


def sample_to_dict(sample: DialogueSample) -> dict:
    return {
        "character_name": sample.character_name,
        "turns": [list(turn) for turn in sample.turns],
        "method_label": sample.method_label,
    }


def sample_from_dict(raw: dict) -> DialogueSample:
    try:
        turns = tuple((str(u), str(a)) for u, a in raw["turns"])
        return DialogueSample(str(raw["character_name"]), turns,
                              str(raw["method_label"]))
    except (KeyError, TypeError, ValueError, ConfigError) as exc:
        raise StorageError(f"bad dialogue sample: {exc}") from exc


def load_sample_file(path: Path) -> list[DialogueSample]:
    """Read one JSON file holding an array of dialogue samples."""
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise StorageError(f"cannot read samples from {path}: {exc}") from exc
    if not isinstance(raw, list):
        raise StorageError(f"{path} does not hold a JSON array of samples")
    return [sample_from_dict(item) for item in raw]


def render_dialogue(name: str, turns: tuple[tuple[str, str], ...]) -> str:
    lines = []
    for user, assistant in turns:
        lines.append(f"User: {user}")
        lines.append(f"{name}: {assistant}")
    return "\n".join(lines)


def _parse_pair_scores(reply: str) -> tuple[JudgeScore, JudgeScore]:
    obj = extract_json_object(reply)

    def one(key: str) -> JudgeScore:
        inner = obj.get(key)
        if not isinstance(inner, dict):
            raise ParseError(f"judge reply is missing the {key!r} object")
        values = []
        for metric in METRICS:
            value = inner.get(metric)
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ParseError(f"judge score {key}.{metric} is missing or "
                                 "not a number")
            values.append(float(value))
        return JudgeScore(*values)

    return one("a"), one("b")


def _judge_once(gateway: LlmGateway, first: DialogueSample,
                second: DialogueSample, language: str,
                ) -> tuple[JudgeScore, JudgeScore]:
    """One judge call; position A holds ``first``, position B ``second``."""
    prompt = render(
        "judge_pair", language,
        name=first.character_name,
        dialogue_a=render_dialogue(first.character_name, first.turns),
        dialogue_b=render_dialogue(second.character_name, second.turns),
    )
    reply = gateway.chat([ChatMessage("user", prompt)], tag="judge_pair",
                         temperature=JUDGE_TEMPERATURE, top_p=JUDGE_TOP_P)
    try:
        return _parse_pair_scores(reply)
    except ParseError as exc:
        repair = render("repair", language, error=str(exc)[:200])
        retry = gateway.chat(
            [
                ChatMessage("user", prompt),
                ChatMessage("assistant", reply),
                ChatMessage("user", repair),
            ],
            tag="judge_pair_repair",
            temperature=JUDGE_TEMPERATURE, top_p=JUDGE_TOP_P,
        )
        try:
            return _parse_pair_scores(retry)
        except ParseError as exc2:
            raise EvaluationError(
                f"judge output for {first.method_label!r} vs "
                f"{second.method_label!r} stayed unparseable: {exc2}"
            ) from exc2


def _mean_score(x: JudgeScore, y: JudgeScore) -> JudgeScore:
    return JudgeScore(*((getattr(x, m) + getattr(y, m)) / 2 for m in METRICS))


def judge_pair(gateway: LlmGateway, a: DialogueSample, b: DialogueSample,
               *, language: str = "en") -> tuple[JudgeScore, JudgeScore]:
    """Score two samples of the same character in both orders and average."""
    if a.character_name != b.character_name:
        raise ConfigError(
            f"cannot judge {a.character_name!r} against {b.character_name!r}")
    a_first, b_second = _judge_once(gateway, a, b, language)
    b_first, a_second = _judge_once(gateway, b, a, language)
    return _mean_score(a_first, a_second), _mean_score(b_first, b_second)


def run_tournament(gateway: LlmGateway, samples: list[DialogueSample],
                   *, language: str = "en", max_workers: int = 4) -> dict:
    """Judge every method pair per character and aggregate method means.

    Pairs are judged concurrently; the report is assembled sequentially
    and is JSON-ready.
    """
    if not samples:
        raise ConfigError("no dialogue samples to judge")
    by_character: dict[str, dict[str, DialogueSample]] = {}
    for sample in samples:
        methods = by_character.setdefault(sample.character_name, {})
        if sample.method_label in methods:
            raise ConfigError(
                f"duplicate sample for {sample.character_name!r} / "
                f"{sample.method_label!r}")
        methods[sample.method_label] = sample

    characters = sorted(by_character)
    all_methods = sorted({s.method_label for s in samples})
    warnings = []
    for character in characters:
        for method in all_methods:
            if method not in by_character[character]:
                warnings.append(f"character {character!r} has no sample "
                                f"for method {method!r}")

    jobs = []
    for character in characters:
        present = sorted(by_character[character])
        for i, method_a in enumerate(present):
            for method_b in present[i + 1:]:
                jobs.append((character, method_a, method_b))
    if len(all_methods) < 2:
        warnings.append("fewer than two methods; nothing to compare")

    def _run(job: tuple[str, str, str]) -> tuple[JudgeScore, JudgeScore]:
        character, method_a, method_b = job
        return judge_pair(gateway, by_character[character][method_a],
                          by_character[character][method_b], language=language)

    if jobs:
        with ThreadPoolExecutor(max_workers=min(max_workers, len(jobs))) as pool:
            results = list(pool.map(_run, jobs))
    else:
        results = []

    pairs = []
    per_method: dict[str, list[JudgeScore]] = {m: [] for m in all_methods}
    for (character, method_a, method_b), (score_a, score_b) in zip(jobs, results):
        pairs.append({
            "character": character,
            "method_a": method_a,
            "method_b": method_b,
            "scores": {method_a: score_to_dict(score_a),
                       method_b: score_to_dict(score_b)},
        })
        per_method[method_a].append(score_a)
        per_method[method_b].append(score_b)

    means = {}
    for method in all_methods:
        scores = per_method[method]
        if scores:
            means[method] = {m: fmean(getattr(s, m) for s in scores)
                             for m in METRICS}
            means[method]["pairs"] = len(scores)
        else:
            means[method] = {m: None for m in METRICS}
            means[method]["pairs"] = 0

    return {
        "characters": characters,
        "methods": all_methods,
        "pairs": pairs,
        "means": means,
        "warnings": warnings,
    }
