"""Prompt rendering for the two context conditions, plus length accounting.

Condition A strips prior API-Request/API-Response lines from the context
before rendering; Condition B keeps the full action-observation trace.
Both renderings end with the same next-action cue line.
"""

from __future__ import annotations

import hashlib
import json
import subprocess
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .calls import render_call
from .corpus import Role, ScoredExample, Turn

__all__ = [
    "Condition",
    "PromptTemplate",
    "RenderedPrompt",
    "StatsError",
    "DEFAULT_TEMPLATE",
    "strip_trajectory",
    "render_prompt",
    "context_stats",
    "export_rendered_jsonl",
    "read_rendered_jsonl",
]


class StatsError(Exception):
    pass


class Condition(Enum):
    """The two context conditions; enum values are the serialized tags."""

    A_STRIPPED = "A"
    B_TRAJECTORY = "B"


@dataclass(frozen=True)
class PromptTemplate:
    user_prefix: str = "User: "
    assistant_prefix: str = "Assistant: "
    api_request_prefix: str = "API-Request: "
    api_response_prefix: str = "API-Response: "
    cue: str = "API-Request:"

    @classmethod
    def from_config(cls, config: Mapping[str, str]) -> "PromptTemplate":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(config) - known
        if unknown:
            raise ValueError(f"unknown template keys: {sorted(unknown)}")
        return cls(**config)


DEFAULT_TEMPLATE = PromptTemplate()


@dataclass
class RenderedPrompt:
    example_id: str
    condition: Condition
    text: str
    char_len: int
    ws_token_len: int
    ext_token_len: int | None = None

    @property
    def prompt_hash(self) -> str:
        return hashlib.sha256(self.text.encode("utf-8")).hexdigest()


def strip_trajectory(context: Sequence[Turn]) -> list[Turn]:
    """Drop api_request/api_response turns, keeping user and assistant text."""
    return [t for t in context if t.role in (Role.USER, Role.ASSISTANT_TEXT)]


def _turn_line(turn: Turn, template: PromptTemplate) -> str:
    if turn.role is Role.USER:
        return template.user_prefix + turn.text
    if turn.role is Role.ASSISTANT_TEXT:
        return template.assistant_prefix + turn.text
    if turn.role is Role.API_REQUEST:
        text = render_call(turn.call) if turn.call is not None else turn.text
        return template.api_request_prefix + text
    return template.api_response_prefix + (turn.response_payload or turn.text)


def render_prompt(
    example: ScoredExample,
    condition: Condition,
    template: PromptTemplate = DEFAULT_TEMPLATE,
) -> RenderedPrompt:
    """Render one example's context under the given condition."""
    if condition is Condition.A_STRIPPED:
        turns = strip_trajectory(example.context)
    else:
        turns = list(example.context)
    lines = [_turn_line(t, template) for t in turns]
    lines.append(template.cue)
    text = "\n".join(lines)
    return RenderedPrompt(
        example_id=example.id,
        condition=condition,
        text=text,
        char_len=len(text),
        ws_token_len=len(text.split()),
    )


def _run_tokenizer(command: Sequence[str], text: str) -> int:
    try:
        proc = subprocess.run(
            list(command),
            input=text.encode("utf-8"),
            capture_output=True,
            check=True,
        )
        return int(proc.stdout.decode("utf-8").strip())
    except (OSError, subprocess.CalledProcessError, ValueError) as exc:
        raise StatsError(
            f"external tokenizer command failed: {list(command)!r}: {exc}"
        ) from exc


def context_stats(
    prompts: Iterable[RenderedPrompt],
    tokenizer_cmd: Sequence[str] | None = None,
    workers: int = 1,
) -> dict[str, dict[str, int]]:
    """Per-condition totals of char, whitespace-token, and optional
    external-tokenizer counts. External counts appear only when a
    tokenizer command is configured."""
    prompts = list(prompts)
    if tokenizer_cmd is not None:
        pending = [p for p in prompts if p.ext_token_len is None]
        if workers > 1 and pending:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                counts = list(
                    pool.map(lambda p: _run_tokenizer(tokenizer_cmd, p.text), pending)
                )
        else:
            counts = [_run_tokenizer(tokenizer_cmd, p.text) for p in pending]
        for prompt, count in zip(pending, counts):
            prompt.ext_token_len = count

    totals: dict[str, dict[str, int]] = {}
    for prompt in prompts:
        tag = prompt.condition.value
        bucket = totals.setdefault(tag, {"char": 0, "ws_token": 0})
        bucket["char"] += prompt.char_len
        bucket["ws_token"] += prompt.ws_token_len
        if tokenizer_cmd is not None:
            bucket["ext_token"] = bucket.get("ext_token", 0) + (prompt.ext_token_len or 0)
    return totals


def read_rendered_jsonl(path: str | Path) -> tuple[list[RenderedPrompt], dict[str, str]]:
    """Read a rendered-prompt export back; returns (prompts, target by id)."""
    prompts: list[RenderedPrompt] = []
    targets: dict[str, str] = {}
    with Path(path).open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
                text = str(raw["prompt"])
                prompts.append(
                    RenderedPrompt(
                        example_id=str(raw["example_id"]),
                        condition=Condition(raw["condition"]),
                        text=text,
                        char_len=len(text),
                        ws_token_len=len(text.split()),
                    )
                )
                targets[str(raw["example_id"])] = str(raw["target"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ValueError(
                    f"{path}: bad rendered-prompt record at line {line_no}: {exc}"
                ) from exc
    return prompts, targets


def export_rendered_jsonl(
    path: str | Path,
    prompts: Sequence[RenderedPrompt],
    targets_by_id: Mapping[str, str],
) -> None:
    """Write the rendered-prompt export, one JSON object per prompt."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for prompt in prompts:
            fh.write(
                json.dumps(
                    {
                        "example_id": prompt.example_id,
                        "condition": prompt.condition.value,
                        "prompt": prompt.text,
                        "target": targets_by_id[prompt.example_id],
                    }
                )
                + "\n"
            )
