"""Model completions for rendered prompts, via an OpenAI-compatible endpoint
or recorded completion files, with a deterministic on-disk cache.

The wire shape is the widely served chat-completions POST; decoding is
pinned greedy (temperature 0). Completions are cached by prompt content
hash so template changes invalidate stale entries automatically.
"""

from __future__ import annotations

import json
import logging
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import requests

from .transform import RenderedPrompt

__all__ = [
    "EndpointConfig",
    "CompletionRecord",
    "CompletionCache",
    "BatchFailure",
    "BatchResult",
    "TransportError",
    "EndpointError",
    "StaleCompletionError",
    "generate_completion",
    "batch_generate",
    "import_completions",
    "write_completions_jsonl",
    "API_KEY_ENV",
]

logger = logging.getLogger(__name__)

API_KEY_ENV = "TOOLSTREAM_API_KEY"


class TransportError(Exception):
    pass


class EndpointError(Exception):
    def __init__(self, status: int, body_snippet: str):
        super().__init__(f"endpoint returned status {status}: {body_snippet}")
        self.status = status
        self.body_snippet = body_snippet


class StaleCompletionError(Exception):
    pass


@dataclass
class EndpointConfig:
    base_url: str
    model_id: str
    max_new_tokens: int = 128
    temperature: float = 0.0
    stop_sequences: tuple[str, ...] = ("\n",)
    timeout: float = 60.0
    max_parallel: int = 4
    retries: int = 2
    retry_backoff: float = 0.5

    def __post_init__(self):
        if self.temperature != 0.0:
            raise ValueError("decoding is pinned greedy; temperature must be 0")
        self.stop_sequences = tuple(self.stop_sequences)


@dataclass
class CompletionRecord:
    example_id: str
    condition: str
    stage: int
    prompt_hash: str
    text: str
    source: str = "http"

    def to_json_obj(self) -> dict:
        return {
            "example_id": self.example_id,
            "condition": self.condition,
            "stage": self.stage,
            "prompt_hash": self.prompt_hash,
            "text": self.text,
        }


class CompletionCache:
    """One file per completion, keyed by (stage, condition, prompt hash).

    Writes go through a temp file plus rename under a lock, so parallel
    generation workers never interleave partial records.
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self._lock = threading.Lock()

    def _path(self, stage: int, condition: str, prompt_hash: str) -> Path:
        return self.root / f"stage_{stage}" / condition / f"{prompt_hash}.json"

    def get(self, stage: int, condition: str, prompt_hash: str) -> CompletionRecord | None:
        path = self._path(stage, condition, prompt_hash)
        if not path.exists():
            return None
        raw = json.loads(path.read_text(encoding="utf-8"))
        return CompletionRecord(
            example_id=raw["example_id"],
            condition=raw["condition"],
            stage=int(raw["stage"]),
            prompt_hash=raw["prompt_hash"],
            text=raw["text"],
            source=raw.get("source", "http"),
        )

    def put(self, record: CompletionRecord) -> None:
        path = self._path(record.stage, record.condition, record.prompt_hash)
        with self._lock:
            path.parent.mkdir(parents=True, exist_ok=True)
            tmp = path.with_suffix(".tmp")
            payload = dict(record.to_json_obj(), source=record.source)
            tmp.write_text(json.dumps(payload) + "\n", encoding="utf-8")
            tmp.replace(path)


def _request_once(cfg: EndpointConfig, prompt_text: str) -> str:
    headers = {"Content-Type": "application/json"}
    api_key = os.environ.get(API_KEY_ENV)
    if api_key:
        headers["Authorization"] = f"Bearer {api_key}"
    payload = {
        "model": cfg.model_id,
        "messages": [{"role": "user", "content": prompt_text}],
        "temperature": 0,
        "max_tokens": cfg.max_new_tokens,
        "stop": list(cfg.stop_sequences),
    }
    try:
        response = requests.post(
            cfg.base_url.rstrip("/") + "/chat/completions",
            json=payload,
            headers=headers,
            timeout=cfg.timeout,
        )
    except requests.RequestException as exc:
        raise TransportError(f"request to {cfg.base_url} failed: {exc}") from exc
    if not 200 <= response.status_code < 300:
        raise EndpointError(response.status_code, response.text[:200])
    try:
        return response.json()["choices"][0]["message"]["content"]
    except (ValueError, KeyError, IndexError, TypeError) as exc:
        raise EndpointError(response.status_code, f"malformed response body: {exc}")


def _request_with_retries(cfg: EndpointConfig, prompt_text: str) -> str:
    attempts = cfg.retries + 1
    last_error: Exception | None = None
    for attempt in range(attempts):
        try:
            return _request_once(cfg, prompt_text)
        except TransportError as exc:
            last_error = exc
        except EndpointError as exc:
            # 4xx other than 429 will not improve on retry.
            if exc.status != 429 and exc.status < 500:
                raise
            last_error = exc
        if attempt < attempts - 1:
            time.sleep(cfg.retry_backoff * (attempt + 1))
    assert last_error is not None
    raise last_error


def generate_completion(
    prompt: RenderedPrompt,
    cfg: EndpointConfig,
    stage: int,
    cache: CompletionCache | None = None,
) -> CompletionRecord:
    """One greedy chat-completion request; cache hits skip the network."""
    condition = prompt.condition.value
    prompt_hash = prompt.prompt_hash
    if cache is not None:
        hit = cache.get(stage, condition, prompt_hash)
        if hit is not None:
            return hit
    text = _request_with_retries(cfg, prompt.text)
    record = CompletionRecord(
        example_id=prompt.example_id,
        condition=condition,
        stage=stage,
        prompt_hash=prompt_hash,
        text=text,
        source="http",
    )
    if cache is not None:
        cache.put(record)
    return record


@dataclass(frozen=True)
class BatchFailure:
    index: int
    example_id: str
    error: str


@dataclass
class BatchResult:
    records: list[CompletionRecord | None] = field(default_factory=list)
    failures: list[BatchFailure] = field(default_factory=list)

    @property
    def ok_records(self) -> list[CompletionRecord]:
        return [r for r in self.records if r is not None]


def batch_generate(
    prompts: Sequence[RenderedPrompt],
    cfg: EndpointConfig,
    stage: int,
    cache: CompletionCache | None = None,
) -> BatchResult:
    """Complete all prompts with at most max_parallel in flight.

    Output index i always corresponds to input prompt i; items that fail
    after retries are enumerated rather than aborting the batch.
    """
    result = BatchResult(records=[None] * len(prompts))

    def run(index: int) -> None:
        try:
            result.records[index] = generate_completion(prompts[index], cfg, stage, cache)
        except (TransportError, EndpointError) as exc:
            result.failures.append(
                BatchFailure(index=index, example_id=prompts[index].example_id, error=str(exc))
            )

    with ThreadPoolExecutor(max_workers=max(1, cfg.max_parallel)) as pool:
        futures = [pool.submit(run, i) for i in range(len(prompts))]
        for future in futures:
            future.result()
    result.failures.sort(key=lambda f: f.index)
    return result


def import_completions(
    path: str | Path,
    prompts: Sequence[RenderedPrompt] | None = None,
    strict: bool = False,
) -> list[CompletionRecord]:
    """Load recorded completions from JSONL (source becomes 'imported').

    When rendered prompts are supplied, each record's prompt_hash is
    validated; mismatches warn by default and raise under strict mode.
    """
    hashes: Mapping[tuple[str, str], str] = {}
    if prompts is not None:
        hashes = {(p.example_id, p.condition.value): p.prompt_hash for p in prompts}
    records: list[CompletionRecord] = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
                record = CompletionRecord(
                    example_id=str(raw["example_id"]),
                    condition=str(raw["condition"]),
                    stage=int(raw["stage"]),
                    prompt_hash=str(raw["prompt_hash"]),
                    text=str(raw["text"]),
                    source="imported",
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}: bad completion record at line {line_no}: {exc}") from exc
            key = (record.example_id, record.condition)
            if key in hashes and hashes[key] != record.prompt_hash:
                message = (
                    f"stale completion for example {record.example_id!r} "
                    f"(condition {record.condition}): prompt hash mismatch"
                )
                if strict:
                    raise StaleCompletionError(message)
                logger.warning(message)
            records.append(record)
    return records


def write_completions_jsonl(path: str | Path, records: Sequence[CompletionRecord]) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record.to_json_obj()) + "\n")
