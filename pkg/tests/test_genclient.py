"""HTTP client behavior against a local mock endpoint, cache semantics,
and completion-file import."""

from __future__ import annotations

import json
import logging

import pytest

from _support import MockEndpoint
from toolstream.genclient import (
    CompletionCache,
    CompletionRecord,
    EndpointConfig,
    EndpointError,
    StaleCompletionError,
    TransportError,
    batch_generate,
    generate_completion,
    import_completions,
    write_completions_jsonl,
)
from toolstream.transform import Condition, RenderedPrompt


def _prompt(i: int, condition=Condition.A_STRIPPED) -> RenderedPrompt:
    text = f"User: request number {i}\nAPI-Request:"
    return RenderedPrompt(
        example_id=f"e:{i}",
        condition=condition,
        text=text,
        char_len=len(text),
        ws_token_len=len(text.split()),
    )


def _config(base_url: str, **overrides) -> EndpointConfig:
    defaults = dict(
        base_url=base_url,
        model_id="test-model",
        timeout=10.0,
        max_parallel=3,
        retries=2,
        retry_backoff=0.01,
    )
    defaults.update(overrides)
    return EndpointConfig(**defaults)


class TestGenerateCompletion:
    def test_echo_mock(self, tmp_path):
        with MockEndpoint() as mock:
            record = generate_completion(_prompt(0), _config(mock.base_url), stage=4)
            assert record.text == "[Ping()]"
            assert record.source == "http"
            assert record.example_id == "e:0"
            assert record.condition == "A"

    def test_cache_hit_skips_network(self, tmp_path):
        cache = CompletionCache(tmp_path / "cache")
        with MockEndpoint() as mock:
            cfg = _config(mock.base_url)
            first = generate_completion(_prompt(1), cfg, stage=2, cache=cache)
            assert mock.requests == 1
            second = generate_completion(_prompt(1), cfg, stage=2, cache=cache)
            assert mock.requests == 1
            assert second.text == first.text

    def test_cache_keyed_by_stage_and_condition(self, tmp_path):
        cache = CompletionCache(tmp_path / "cache")
        with MockEndpoint() as mock:
            cfg = _config(mock.base_url)
            generate_completion(_prompt(1), cfg, stage=1, cache=cache)
            generate_completion(_prompt(1), cfg, stage=2, cache=cache)
            generate_completion(_prompt(1, Condition.B_TRAJECTORY), cfg, stage=2, cache=cache)
            assert mock.requests == 3

    def test_unreachable_endpoint(self, tmp_path):
        cache = CompletionCache(tmp_path / "cache")
        cfg = _config("http://127.0.0.1:9", retries=0, timeout=0.5)
        with pytest.raises(TransportError):
            generate_completion(_prompt(2), cfg, stage=1, cache=cache)
        assert cache.get(1, "A", _prompt(2).prompt_hash) is None

    def test_non_retryable_status_raises_endpoint_error(self):
        with MockEndpoint() as mock:
            mock.fail_always.add("request number 3")
            with pytest.raises(EndpointError) as excinfo:
                generate_completion(_prompt(3), _config(mock.base_url), stage=1)
            assert excinfo.value.status == 400
            assert mock.requests == 1  # no retry on 4xx

    def test_retry_on_transient_failure(self):
        with MockEndpoint() as mock:
            mock.fail_once.add("request number 4")
            record = generate_completion(_prompt(4), _config(mock.base_url), stage=1)
            assert record.text == "[Ping()]"
            assert mock.requests == 2

    def test_temperature_pinned(self):
        with pytest.raises(ValueError):
            EndpointConfig(base_url="http://x", model_id="m", temperature=0.7)

    def test_greedy_payload_shape(self):
        with MockEndpoint() as mock:
            cfg = _config(mock.base_url, max_new_tokens=64, stop_sequences=("\n", "]"))
            generate_completion(_prompt(6), cfg, stage=1)
            payload = mock.last_payload
            assert payload["model"] == "test-model"
            assert payload["temperature"] == 0
            assert payload["max_tokens"] == 64
            assert payload["stop"] == ["\n", "]"]
            assert payload["messages"][0]["role"] == "user"

    def test_bearer_token_sent_when_configured(self, monkeypatch):
        with MockEndpoint() as mock:
            cfg = _config(mock.base_url)
            monkeypatch.delenv("TOOLSTREAM_API_KEY", raising=False)
            generate_completion(_prompt(7), cfg, stage=1)
            assert "Authorization" not in mock.last_headers
            monkeypatch.setenv("TOOLSTREAM_API_KEY", "sekrit")
            generate_completion(_prompt(8), cfg, stage=1)
            assert mock.last_headers.get("Authorization") == "Bearer sekrit"


class TestBatchGenerate:
    def test_order_preserved(self):
        with MockEndpoint(reply=lambda p: f"[Echo(n='{p.split()[3]}')]") as mock:
            prompts = [_prompt(i) for i in range(8)]
            result = batch_generate(prompts, _config(mock.base_url), stage=1)
            assert not result.failures
            for i, record in enumerate(result.records):
                assert record.example_id == f"e:{i}"
                assert record.text == f"[Echo(n='{i}')]"

    def test_inflight_limit_honored(self):
        with MockEndpoint(delay=0.05) as mock:
            prompts = [_prompt(i) for i in range(10)]
            result = batch_generate(prompts, _config(mock.base_url, max_parallel=3), stage=1)
            assert not result.failures
            assert mock.requests == 10
            assert mock.max_inflight <= 3

    def test_single_failure_enumerated(self):
        with MockEndpoint() as mock:
            mock.fail_always.add("request number 5")
            prompts = [_prompt(i) for i in range(10)]
            result = batch_generate(prompts, _config(mock.base_url), stage=1)
            assert len(result.ok_records) == 9
            assert len(result.failures) == 1
            assert result.failures[0].example_id == "e:5"
            assert result.records[5] is None

    def test_all_cached_means_no_network(self, tmp_path):
        cache = CompletionCache(tmp_path / "cache")
        prompts = [_prompt(i) for i in range(6)]
        with MockEndpoint() as mock:
            cfg = _config(mock.base_url)
            batch_generate(prompts, cfg, stage=3, cache=cache)
            first_pass = mock.requests
            result = batch_generate(prompts, cfg, stage=3, cache=cache)
            assert mock.requests == first_pass
            assert len(result.ok_records) == len(prompts)


class TestImportCompletions:
    def _records(self, prompts):
        return [
            CompletionRecord(
                example_id=p.example_id,
                condition=p.condition.value,
                stage=4,
                prompt_hash=p.prompt_hash,
                text="[Ping()]",
            )
            for p in prompts
        ]

    def test_roundtrip(self, tmp_path):
        prompts = [_prompt(i) for i in range(3)]
        path = tmp_path / "completions.jsonl"
        write_completions_jsonl(path, self._records(prompts))
        loaded = import_completions(path, prompts=prompts)
        assert len(loaded) == 3
        assert all(r.source == "imported" for r in loaded)

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        path.write_text("", encoding="utf-8")
        assert import_completions(path) == []

    def test_hash_mismatch_warns_by_default(self, tmp_path, caplog):
        prompts = [_prompt(0)]
        records = self._records(prompts)
        records[0].prompt_hash = "0" * 64
        path = tmp_path / "stale.jsonl"
        write_completions_jsonl(path, records)
        with caplog.at_level(logging.WARNING):
            loaded = import_completions(path, prompts=prompts)
        assert len(loaded) == 1
        assert any("e:0" in message for message in caplog.messages)

    def test_hash_mismatch_strict_raises(self, tmp_path):
        prompts = [_prompt(0)]
        records = self._records(prompts)
        records[0].prompt_hash = "0" * 64
        path = tmp_path / "stale.jsonl"
        write_completions_jsonl(path, records)
        with pytest.raises(StaleCompletionError) as excinfo:
            import_completions(path, prompts=prompts, strict=True)
        assert "e:0" in str(excinfo.value)

    def test_malformed_record_rejected(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text(json.dumps({"example_id": "x"}) + "\n", encoding="utf-8")
        with pytest.raises(ValueError):
            import_completions(path)

    def test_reference_fixture_record_counts(self, reference_paths):
        for condition in ("A", "B"):
            records = import_completions(reference_paths[f"completions_{condition}"])
            assert len(records) == 440
            assert {r.stage for r in records} == {4}
            assert {r.condition for r in records} == {condition}
