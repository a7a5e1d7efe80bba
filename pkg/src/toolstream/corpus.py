"""Dialogue corpus loading, domain-block partitioning, and example extraction.

Corpora are JSONL files, one episode per line:

    {"id": str, "turns": [{"role": "user"|"assistant"|"api_request"|"api_response",
                           "text": str}, ...]}

Every api_request turn must contain exactly one parseable bracketed call;
its text is canonicalized at ingestion so downstream rendering is stable.
"""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

from .calls import ApiCall, ParsedCall, parse_first_call, render_call

__all__ = [
    "Role",
    "Turn",
    "Episode",
    "ScoredExample",
    "DomainBlock",
    "StreamSpec",
    "CorpusError",
    "IngestionError",
    "DuplicateEpisodeError",
    "PartitionError",
    "load_corpus",
    "extract_examples",
    "partition_blocks",
    "sample_eval_subset",
    "write_blocks_json",
    "read_blocks_json",
    "examples_by_id",
]


class CorpusError(Exception):
    pass


class IngestionError(CorpusError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(message)
        self.line = line


class DuplicateEpisodeError(IngestionError):
    pass


class PartitionError(CorpusError):
    pass


class Role(Enum):
    """Turn roles; enum values match the JSONL wire names."""

    USER = "user"
    ASSISTANT_TEXT = "assistant"
    API_REQUEST = "api_request"
    API_RESPONSE = "api_response"


@dataclass
class Turn:
    role: Role
    text: str
    call: ApiCall | None = None
    response_payload: str | None = None


@dataclass
class Episode:
    id: str
    turns: list[Turn]
    api_names: frozenset[str] = field(init=False)

    def __post_init__(self):
        self.api_names = frozenset(
            t.call.name for t in self.turns if t.role is Role.API_REQUEST and t.call
        )


@dataclass
class ScoredExample:
    """A next-call prediction target: the context before one api_request turn."""

    id: str
    episode_id: str
    cut_index: int
    context: list[Turn]
    expected: ApiCall
    block_id: int | None = None


@dataclass
class DomainBlock:
    block_id: int
    api_names: frozenset[str]
    examples: list[ScoredExample]


@dataclass(frozen=True)
class StreamSpec:
    """Shape of a domain-block stream: block count, order, seeds, sampling."""

    T: int
    block_order: tuple[int, ...] = ()
    seed: int = 42
    sample_size: int | None = None

    def __post_init__(self):
        if self.T < 2:
            raise ValueError("a stream needs at least 2 blocks")
        order = self.block_order or tuple(range(1, self.T + 1))
        object.__setattr__(self, "block_order", tuple(order))
        if sorted(self.block_order) != list(range(1, self.T + 1)):
            raise ValueError(f"block_order must be a permutation of 1..{self.T}")
        if self.sample_size is not None and self.sample_size < 1:
            raise ValueError("sample_size must be >= 1")


def load_corpus(path: str | Path, format: str = "jsonl") -> list[Episode]:
    """Load all episodes from a JSONL corpus file, preserving order."""
    if format != "jsonl":
        raise ValueError(f"unsupported corpus format: {format!r}")
    path = Path(path)
    episodes: list[Episode] = []
    seen_ids: set[str] = set()
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise IngestionError(
                    f"line {line_no}: invalid JSON ({exc.msg})", line=line_no
                ) from exc
            episode = _episode_from_record(record, line_no)
            if episode.id in seen_ids:
                raise DuplicateEpisodeError(
                    f"line {line_no}: duplicate episode id {episode.id!r}",
                    line=line_no,
                )
            seen_ids.add(episode.id)
            episodes.append(episode)
    return episodes


def _episode_from_record(record: object, line_no: int) -> Episode:
    if not isinstance(record, dict):
        raise IngestionError(f"line {line_no}: episode must be a JSON object", line=line_no)
    ep_id = record.get("id")
    turns_raw = record.get("turns")
    if not isinstance(ep_id, str) or not ep_id:
        raise IngestionError(f"line {line_no}: missing or invalid 'id'", line=line_no)
    if not isinstance(turns_raw, list):
        raise IngestionError(f"line {line_no}: missing or invalid 'turns'", line=line_no)
    turns: list[Turn] = []
    for idx, turn_raw in enumerate(turns_raw):
        if not isinstance(turn_raw, dict):
            raise IngestionError(
                f"line {line_no}: turn {idx} must be a JSON object", line=line_no
            )
        role_raw = turn_raw.get("role")
        text = turn_raw.get("text")
        try:
            role = Role(role_raw)
        except ValueError:
            raise IngestionError(
                f"line {line_no}: turn {idx} has unknown role {role_raw!r}",
                line=line_no,
            ) from None
        if not isinstance(text, str):
            raise IngestionError(
                f"line {line_no}: turn {idx} has missing or non-string text",
                line=line_no,
            )
        turns.append(_build_turn(role, text, ep_id, idx, line_no))
    return Episode(id=ep_id, turns=turns)


def _build_turn(role: Role, text: str, ep_id: str, idx: int, line_no: int) -> Turn:
    if role is Role.API_REQUEST:
        parsed = parse_first_call(text)
        if not isinstance(parsed, ParsedCall):
            raise IngestionError(
                f"line {line_no}: episode {ep_id!r} turn {idx}: api_request text "
                f"contains no parseable call ({parsed.reason.value})",
                line=line_no,
            )
        trailing = parse_first_call(text[parsed.span[1]:])
        if isinstance(trailing, ParsedCall):
            raise IngestionError(
                f"line {line_no}: episode {ep_id!r} turn {idx}: api_request text "
                "contains more than one call",
                line=line_no,
            )
        # Store the canonical rendering so the turn text and the parsed
        # call can never drift apart.
        return Turn(role=role, text=render_call(parsed.call), call=parsed.call)
    if role is Role.API_RESPONSE:
        return Turn(role=role, text=text, response_payload=text)
    return Turn(role=role, text=text)


def extract_examples(episode: Episode) -> list[ScoredExample]:
    """One scored example per api_request turn; context is all prior turns."""
    examples: list[ScoredExample] = []
    for idx, turn in enumerate(episode.turns):
        if turn.role is not Role.API_REQUEST:
            continue
        assert turn.call is not None
        examples.append(
            ScoredExample(
                id=f"{episode.id}:{idx}",
                episode_id=episode.id,
                cut_index=idx,
                context=list(episode.turns[:idx]),
                expected=turn.call,
            )
        )
    return examples


def partition_blocks(episodes: Sequence[Episode], T: int, seed: int) -> list[DomainBlock]:
    """Split scored examples into T blocks with pairwise-disjoint API names.

    API-name groups are bin-packed greedily: groups in descending size
    order, each placed on the currently smallest block. Groups of equal
    size are ordered by a seeded shuffle; block-load ties go to the
    lowest block id.
    """
    if T < 2:
        raise PartitionError("T must be >= 2")
    all_examples: list[ScoredExample] = []
    for episode in episodes:
        all_examples.extend(extract_examples(episode))
    groups: dict[str, list[ScoredExample]] = {}
    for example in all_examples:
        groups.setdefault(example.expected.name, []).append(example)
    if len(groups) < T:
        raise PartitionError(
            f"need at least {T} distinct API names to build {T} blocks, "
            f"found {len(groups)}"
        )
    names = sorted(groups)
    random.Random(seed).shuffle(names)
    names.sort(key=lambda name: -len(groups[name]))  # stable: seeded order breaks ties

    loads = [0] * T
    members: list[list[str]] = [[] for _ in range(T)]
    for name in names:
        target = min(range(T), key=lambda i: (loads[i], i))
        members[target].append(name)
        loads[target] += len(groups[name])

    blocks: list[DomainBlock] = []
    for i in range(T):
        block_id = i + 1
        member_set = frozenset(members[i])
        examples = [ex for ex in all_examples if ex.expected.name in member_set]
        for ex in examples:
            ex.block_id = block_id
        blocks.append(DomainBlock(block_id=block_id, api_names=member_set, examples=examples))
    return blocks


def _subset_rng(seed: int, block_id: int, n: int) -> random.Random:
    digest = hashlib.sha256(f"{seed}:{block_id}:{n}".encode()).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


def sample_eval_subset(block: DomainBlock, n: int, seed: int) -> list[ScoredExample]:
    """Deterministic uniform sample of min(n, |examples|) items, corpus order."""
    if n < 1:
        raise ValueError("sample size must be >= 1")
    size = len(block.examples)
    k = min(n, size)
    rng = _subset_rng(seed, block.block_id, n)
    picked = sorted(rng.sample(range(size), k))
    return [block.examples[i] for i in picked]


def write_blocks_json(path: str | Path, blocks: Sequence[DomainBlock]) -> None:
    payload = {
        "T": len(blocks),
        "blocks": [
            {
                "block_id": b.block_id,
                "api_names": sorted(b.api_names),
                "example_ids": [ex.id for ex in b.examples],
            }
            for b in sorted(blocks, key=lambda b: b.block_id)
        ],
    }
    Path(path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def read_blocks_json(path: str | Path) -> tuple[int, dict[str, int]]:
    """Return (T, example_id -> block_id) from a blocks.json file."""
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    try:
        T = int(payload["T"])
        assignment: dict[str, int] = {}
        for block in payload["blocks"]:
            block_id = int(block["block_id"])
            for example_id in block["example_ids"]:
                assignment[str(example_id)] = block_id
    except (KeyError, TypeError, ValueError) as exc:
        raise CorpusError(f"malformed blocks file {path}: {exc}") from exc
    return T, assignment


def examples_by_id(episodes: Iterable[Episode]) -> dict[str, ScoredExample]:
    index: dict[str, ScoredExample] = {}
    for episode in episodes:
        for example in extract_examples(episode):
            index[example.id] = example
    return index
