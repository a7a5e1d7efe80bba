"""Run orchestration and artifact emission: score files, category tables,
stage-by-block matrices, plot-ready heatmap data, and the run manifest.

Every artifact is a pure function of the manifest inputs plus the
completion source, so reruns are byte-identical.
"""

from __future__ import annotations

import csv
import json
import sys
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Mapping, Sequence

from . import __version__
from .clmetrics import matrix_from_rows, summarize, write_matrix_csv
from .corpus import (
    DomainBlock,
    StreamSpec,
    load_corpus,
    partition_blocks,
    sample_eval_subset,
    write_blocks_json,
)
from .genclient import (
    CompletionCache,
    CompletionRecord,
    EndpointConfig,
    batch_generate,
    import_completions,
)
from .scoring import (
    BlockScore,
    ScoreRecord,
    aggregate_block,
    aggregate_macro,
    aggregate_micro,
    score_completions,
    write_category_csv,
    write_scores_jsonl,
)
from .transform import (
    DEFAULT_TEMPLATE,
    Condition,
    PromptTemplate,
    RenderedPrompt,
    context_stats,
    export_rendered_jsonl,
    render_prompt,
)
from .calls import render_call

__all__ = [
    "RunManifest",
    "ReportError",
    "METRICS",
    "format_pct",
    "emit_heatmap_data",
    "block_scores_by_stage",
    "stage_rows",
    "run_report",
]

METRICS = ("exact", "name", "name_any", "malformed")

_METRIC_ATTR = {
    "exact": "acc_exact",
    "name": "acc_name",
    "name_any": "acc_name_any",
    "malformed": "rate_malformed",
}


class ReportError(Exception):
    pass


def format_pct(fraction: float) -> str:
    """Percentage with one decimal place, half-up rounding."""
    return str(
        Decimal(repr(fraction * 100)).quantize(Decimal("0.1"), rounding=ROUND_HALF_UP)
    )


@dataclass(frozen=True)
class RunManifest:
    """Everything needed to reproduce a run given the completion source."""

    corpus: str
    stream: StreamSpec
    conditions: tuple[str, ...]
    stages: tuple[int, ...]
    source: Mapping[str, object]
    tool_version: str = __version__

    def to_dict(self) -> dict:
        return {
            "tool": "toolstream",
            "tool_version": self.tool_version,
            "corpus": self.corpus,
            "stream": {
                "T": self.stream.T,
                "block_order": list(self.stream.block_order),
                "seed": self.stream.seed,
                "sample_size": self.stream.sample_size,
            },
            "conditions": list(self.conditions),
            "stages": list(self.stages),
            "source": dict(self.source),
        }


def _write_json(path: Path, payload: object) -> None:
    path.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def block_scores_by_stage(
    records: Sequence[ScoreRecord],
) -> dict[int, dict[int, BlockScore]]:
    """Group score records and aggregate: stage -> block_id -> BlockScore."""
    grouped: dict[tuple[int, int], list[ScoreRecord]] = {}
    for record in records:
        grouped.setdefault((record.stage, record.block_id), []).append(record)
    out: dict[int, dict[int, BlockScore]] = {}
    for (stage, block_id), recs in sorted(grouped.items()):
        out.setdefault(stage, {})[block_id] = aggregate_block(recs)
    return out


def stage_rows(
    scores: Mapping[int, Mapping[int, BlockScore]],
    stream: StreamSpec,
    metric: str,
) -> dict[int, list[float]]:
    """Matrix rows (stage -> per-block values) for stages covering every block.

    Column order follows the stream's block order so the diagonal is the
    just-trained block.
    """
    attr = _METRIC_ATTR[metric]
    rows: dict[int, list[float]] = {}
    for stage, by_block in scores.items():
        if all(b in by_block for b in stream.block_order):
            rows[stage] = [getattr(by_block[b], attr) for b in stream.block_order]
    return rows


def emit_heatmap_data(
    path: str | Path,
    per_condition_rows: Mapping[str, Mapping[int, Sequence[float]]],
    block_ids: Sequence[int],
) -> None:
    """Long-format CSV (condition,stage,block,value) for external plotting."""
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["condition", "stage", "block", "value"])
        for condition in sorted(per_condition_rows):
            rows = per_condition_rows[condition]
            for stage in sorted(rows):
                for block_id, value in zip(block_ids, rows[stage]):
                    writer.writerow([condition, stage, block_id, repr(float(value))])


def _final_table_rows(
    final_scores: Mapping[str, Mapping[int, BlockScore]],
    stream: StreamSpec,
) -> list[list[str]]:
    rows = []
    for condition in sorted(final_scores):
        by_block = final_scores[condition]
        for metric in METRICS:
            attr = _METRIC_ATTR[metric]
            values = [getattr(by_block[b], attr) for b in stream.block_order]
            mean = sum(values) / len(values)
            rows.append(
                [condition, metric]
                + [format_pct(v) for v in values]
                + [format_pct(mean)]
            )
    return rows


def _eval_examples(blocks: Sequence[DomainBlock], stream: StreamSpec):
    if stream.sample_size is None:
        selected = [ex for block in blocks for ex in block.examples]
    else:
        selected = [
            ex
            for block in blocks
            for ex in sample_eval_subset(block, stream.sample_size, stream.seed)
        ]
    return {ex.id: ex for ex in selected}


def run_report(
    corpus_path: str | Path,
    out_dir: str | Path,
    stream: StreamSpec,
    conditions: Sequence[Condition],
    import_paths: Sequence[str | Path] = (),
    endpoint: EndpointConfig | None = None,
    stages: Sequence[int] = (),
    cache_dir: str | Path | None = None,
    template: PromptTemplate = DEFAULT_TEMPLATE,
    tokenizer_cmd: Sequence[str] | None = None,
    strict_import: bool = False,
) -> Path:
    """End-to-end pipeline: split, render, obtain completions, score, emit.

    Completions come either from recorded JSONL files (import_paths) or a
    live endpoint (endpoint + stages). Returns the output directory.
    """
    if bool(import_paths) == (endpoint is not None):
        raise ReportError("exactly one completion source is required: imports or an endpoint")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    episodes = load_corpus(corpus_path)
    blocks = partition_blocks(episodes, stream.T, stream.seed)
    write_blocks_json(out / "blocks.json", blocks)
    examples = _eval_examples(blocks, stream)
    ordered_ids = sorted(examples)
    targets = {ex_id: render_call(examples[ex_id].expected) for ex_id in ordered_ids}

    prompts_by_condition: dict[str, list[RenderedPrompt]] = {}
    for condition in conditions:
        prompts = [render_prompt(examples[ex_id], condition, template) for ex_id in ordered_ids]
        prompts_by_condition[condition.value] = prompts
        export_rendered_jsonl(out / f"prompts_{condition.value}.jsonl", prompts, targets)

    all_prompts = [p for ps in prompts_by_condition.values() for p in ps]
    completions: list[CompletionRecord] = []
    if import_paths:
        for path in import_paths:
            imported = import_completions(path, prompts=all_prompts, strict=strict_import)
            completions.extend(
                r for r in imported if r.example_id in examples
            )
    else:
        cache = CompletionCache(cache_dir) if cache_dir else None
        for condition in conditions:
            for stage in stages:
                batch = batch_generate(
                    prompts_by_condition[condition.value], endpoint, stage, cache
                )
                if batch.failures:
                    failed = ", ".join(f.example_id for f in batch.failures[:5])
                    raise ReportError(
                        f"{len(batch.failures)} completions failed at stage {stage} "
                        f"(condition {condition.value}): {failed}"
                    )
                completions.extend(batch.ok_records)

    stages_seen: set[int] = set()
    final_scores: dict[str, dict[int, BlockScore]] = {}
    records_by_tag: dict[str, list[ScoreRecord]] = {}
    rows_by_metric: dict[str, dict[str, dict[int, list[float]]]] = {m: {} for m in METRICS}
    for condition in conditions:
        tag = condition.value
        cond_records = [c for c in completions if c.condition == tag]
        score_records = score_completions(cond_records, examples)
        score_records.sort(key=lambda r: (r.stage, r.block_id, r.example_id))
        if not score_records:
            raise ReportError(f"no completions found for condition {tag}")
        records_by_tag[tag] = score_records
        stages_seen.update(r.stage for r in score_records)
        write_scores_jsonl(out / f"scores_{tag}.jsonl", score_records)

        scores = block_scores_by_stage(score_records)
        final_stage = stream.T
        if final_stage in scores and all(
            b in scores[final_stage] for b in stream.block_order
        ):
            final_scores[tag] = scores[final_stage]
            final_records = [r for r in score_records if r.stage == final_stage]
            write_category_csv(out / f"categories_{tag}.csv", final_records)
        for metric in METRICS:
            rows = stage_rows(scores, stream, metric)
            if rows:
                rows_by_metric[metric][tag] = rows
                write_matrix_csv(
                    out / f"matrix_{metric}_{tag}.csv",
                    stream.T,
                    rows,
                    block_ids=stream.block_order,
                )

        matrix_rows = rows_by_metric["exact"].get(tag, {})
        if all(s in matrix_rows for s in range(0, stream.T + 1)):
            matrix, baseline = matrix_from_rows(matrix_rows, stream.T)
            summary = summarize(matrix, baseline)
            _write_json(out / f"summary_{tag}.json", summary.to_dict())
        else:
            print(
                f"note: condition {tag} lacks stage rows 0..{stream.T}; "
                "skipping the continual-learning summary",
                file=sys.stderr,
            )

    for metric in METRICS:
        per_condition = {
            tag: {s: row for s, row in rows.items() if s >= 1}
            for tag, rows in rows_by_metric[metric].items()
        }
        emit_heatmap_data(
            out / f"heatmap_{metric}.csv", per_condition, stream.block_order
        )

    if final_scores:
        with (out / "final_table.csv").open("w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["condition", "metric"]
                + [f"block_{b}" for b in stream.block_order]
                + ["mean"]
            )
            writer.writerows(_final_table_rows(final_scores, stream))
        means = {}
        for tag in sorted(final_scores):
            macro = aggregate_macro([final_scores[tag][b] for b in stream.block_order])
            finals = [r for r in records_by_tag[tag] if r.stage == stream.T]
            means[tag] = {
                "macro": macro,
                "micro": aggregate_micro(finals),
                "n_final": len(finals),
            }
        _write_json(out / "final_means.json", means)

    stats = context_stats(all_prompts, tokenizer_cmd=tokenizer_cmd)
    if "A" in stats and "B" in stats and stats["A"]["ws_token"] > 0:
        stats["ws_token_ratio_b_over_a"] = (
            stats["B"]["ws_token"] / stats["A"]["ws_token"]
        )
    _write_json(out / "context_stats.json", stats)

    if import_paths:
        source: dict[str, object] = {
            "mode": "import",
            "paths": [str(p) for p in import_paths],
        }
    else:
        source = {"mode": "http", "base_url": endpoint.base_url, "model_id": endpoint.model_id}
    manifest = RunManifest(
        corpus=str(corpus_path),
        stream=stream,
        conditions=tuple(c.value for c in conditions),
        stages=tuple(sorted(stages_seen)),
        source=source,
    )
    _write_json(out / "manifest.json", manifest.to_dict())
    return out
