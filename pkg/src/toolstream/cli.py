"""Command-line interface.

Subcommands cover the pipeline stages individually (split, render,
generate, score, matrix, summary) plus an end-to-end `report`, a line
parser for debugging, and a deterministic fixture writer.

Exit codes:
  0  success
  2  command-line usage error
  3  missing or unreadable input (file not found, ingestion error)
  4  validation error (partition, schema, matrix, aggregation)
  5  endpoint or transport failure
  6  stale completions under --strict
  1  unexpected internal error
"""

from __future__ import annotations

import argparse
import json
import shlex
import sys
from pathlib import Path

from .calls import (
    NormalizationError,
    ParsedCall,
    normalize_params,
    parse_first_call,
    render_call,
)
from .clmetrics import (
    BaselineVector,
    MetricsError,
    matrix_from_rows,
    read_matrix_csv,
    summarize,
    write_matrix_csv,
)
from .corpus import (
    CorpusError,
    DomainBlock,
    IngestionError,
    PartitionError,
    StreamSpec,
    examples_by_id,
    load_corpus,
    partition_blocks,
    read_blocks_json,
    sample_eval_subset,
    write_blocks_json,
)
from .fixtures import write_reference_fixture
from .genclient import (
    CompletionCache,
    EndpointConfig,
    EndpointError,
    StaleCompletionError,
    TransportError,
    batch_generate,
    import_completions,
    write_completions_jsonl,
)
from .report import ReportError, block_scores_by_stage, run_report, stage_rows
from .scoring import (
    AggregationError,
    read_scores_jsonl,
    score_completions,
    write_category_csv,
    write_scores_jsonl,
)
from .transform import (
    DEFAULT_TEMPLATE,
    Condition,
    PromptTemplate,
    export_rendered_jsonl,
    read_rendered_jsonl,
    render_prompt,
)
from . import __version__

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USAGE = 2
EXIT_INPUT = 3
EXIT_VALIDATION = 4
EXIT_ENDPOINT = 5
EXIT_STALE = 6

_EPILOG = __doc__.split("Exit codes:")[1] if __doc__ else ""


def _condition(value: str) -> Condition:
    try:
        return Condition(value.upper())
    except ValueError:
        raise argparse.ArgumentTypeError(f"condition must be A or B, got {value!r}")


def _int_list(value: str) -> list[int]:
    return [int(v) for v in value.split(",") if v.strip()]


def _load_template(path: str | None) -> PromptTemplate:
    if not path:
        return DEFAULT_TEMPLATE
    config = json.loads(Path(path).read_text(encoding="utf-8"))
    return PromptTemplate.from_config(config)


def _decode_stop(values: list[str] | None) -> tuple[str, ...]:
    if not values:
        return ("\n",)
    return tuple(v.encode("utf-8").decode("unicode_escape") for v in values)


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(
        prog="toolstream",
        description="Continual tool-use evaluation harness.",
        epilog="Exit codes:" + _EPILOG,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=f"toolstream {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    registry: dict[str, argparse.ArgumentParser] = {}

    def add(name: str, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.add_argument(
            "--config",
            help="JSON file of flag defaults (command-line flags take precedence)",
        )
        registry[name] = p
        return p

    p = add("split", "partition a corpus into disjoint-API domain blocks")
    p.add_argument("--corpus", help="episode JSONL file")
    p.add_argument("--blocks", type=int, default=4, help="number of blocks T")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out", help="blocks.json output path")
    p.set_defaults(func=cmd_split, required=("corpus", "out"))

    p = add("render", "render next-call prompts for one condition")
    p.add_argument("--corpus")
    p.add_argument("--condition", type=_condition)
    p.add_argument("--out", help="prompts JSONL output path")
    p.add_argument("--template", help="JSON template config")
    p.add_argument("--blocks-file", help="blocks.json (needed with --sample)")
    p.add_argument("--sample", type=int, help="per-block eval sample size")
    p.add_argument("--sample-seed", type=int, default=42)
    p.set_defaults(func=cmd_render, required=("corpus", "condition", "out"))

    p = add("generate", "obtain completions from an endpoint or recorded file")
    p.add_argument("--prompts", help="rendered prompts JSONL")
    p.add_argument("--stage", type=int, help="trained-through stage label")
    p.add_argument("--out", help="completions JSONL output path")
    p.add_argument("--base-url")
    p.add_argument("--model")
    p.add_argument("--max-tokens", type=int, default=128)
    p.add_argument("--stop", action="append", help="stop sequence (repeatable; escapes decoded)")
    p.add_argument("--timeout", type=float, default=60.0)
    p.add_argument("--max-parallel", type=int, default=4)
    p.add_argument("--retries", type=int, default=2)
    p.add_argument("--cache-dir")
    p.add_argument("--import-file", help="recorded completions to validate and re-emit")
    p.add_argument("--strict", action="store_true", help="hash mismatches become errors")
    p.set_defaults(func=cmd_generate, required=("prompts", "out"))

    p = add("score", "score completions against the corpus ground truth")
    p.add_argument("--corpus")
    p.add_argument("--blocks-file")
    p.add_argument("--completions", action="append", help="completions JSONL (repeatable)")
    p.add_argument("--out", help="score JSONL output path")
    p.add_argument("--categories", help="optional category-count CSV output")
    p.add_argument("--condition", type=_condition, help="restrict to one condition")
    p.add_argument("--prompts", help="rendered prompts JSONL for hash validation")
    p.add_argument("--strict", action="store_true")
    p.set_defaults(func=cmd_score, required=("corpus", "blocks_file", "completions", "out"))

    p = add("matrix", "assemble stage-by-block accuracy matrices from scores")
    p.add_argument("--scores", action="append", help="score JSONL (repeatable)")
    p.add_argument("--metric", default="exact", choices=["exact", "name", "name_any", "malformed"])
    p.add_argument("--blocks", type=int, help="block count T (default: max block id seen)")
    p.add_argument("--block-order", type=_int_list, help="comma-separated block ids")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out", help="matrix CSV output path")
    p.set_defaults(func=cmd_matrix, required=("scores", "out"))

    p = add("summary", "continual-learning statistics from a matrix CSV")
    p.add_argument("--matrix", help="matrix CSV (stage 0 row optional)")
    p.add_argument("--baseline", help="baseline CSV when the matrix lacks a stage 0 row")
    p.add_argument("--out", help="summary JSON path (default: stdout)")
    p.set_defaults(func=cmd_summary, required=("matrix",))

    p = add("report", "end-to-end run: split, render, complete, score, emit")
    p.add_argument("--corpus")
    p.add_argument("--blocks", type=int, default=4)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--block-order", type=_int_list)
    p.add_argument("--conditions", default="A,B", help="comma-separated condition tags")
    p.add_argument("--import", dest="imports", action="append",
                   help="recorded completions JSONL (repeatable)")
    p.add_argument("--base-url")
    p.add_argument("--model")
    p.add_argument("--stages", type=_int_list, help="stages to generate (endpoint mode)")
    p.add_argument("--max-tokens", type=int, default=128)
    p.add_argument("--stop", action="append")
    p.add_argument("--timeout", type=float, default=60.0)
    p.add_argument("--max-parallel", type=int, default=4)
    p.add_argument("--retries", type=int, default=2)
    p.add_argument("--cache-dir")
    p.add_argument("--sample", type=int, help="per-block eval sample size")
    p.add_argument("--template", help="JSON template config")
    p.add_argument("--tokenizer-cmd", help="external tokenizer command (shell-split)")
    p.add_argument("--strict", action="store_true")
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_report, required=("corpus", "out"))

    p = add("parse", "parse call lines from standard input (debugging)")
    p.set_defaults(func=cmd_parse, required=())

    p = add("fixtures", "write the bundled reference corpus and completions")
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_fixtures, required=("out",))

    return parser, registry


def _apply_config(args: argparse.Namespace, sub: argparse.ArgumentParser) -> None:
    if not getattr(args, "config", None):
        return
    config = json.loads(Path(args.config).read_text(encoding="utf-8"))
    if not isinstance(config, dict):
        raise ValueError("--config file must hold a JSON object")
    for key, value in config.items():
        dest = key.replace("-", "_")
        if not hasattr(args, dest):
            raise ValueError(f"--config key {key!r} matches no flag of this subcommand")
        if getattr(args, dest) == sub.get_default(dest):
            setattr(args, dest, value)


def _require(args: argparse.Namespace, parser: argparse.ArgumentParser) -> None:
    missing = [
        "--" + name.replace("_", "-")
        for name in args.required
        if getattr(args, name, None) in (None, [])
    ]
    if missing:
        parser.error(f"missing required arguments: {', '.join(missing)}")


def _endpoint_config(args: argparse.Namespace) -> EndpointConfig:
    return EndpointConfig(
        base_url=args.base_url,
        model_id=args.model,
        max_new_tokens=args.max_tokens,
        stop_sequences=_decode_stop(args.stop),
        timeout=args.timeout,
        max_parallel=args.max_parallel,
        retries=args.retries,
    )


def cmd_split(args: argparse.Namespace) -> int:
    episodes = load_corpus(args.corpus)
    blocks = partition_blocks(episodes, args.blocks, args.seed)
    write_blocks_json(args.out, blocks)
    sizes = ", ".join(f"block {b.block_id}: {len(b.examples)}" for b in blocks)
    print(f"wrote {args.out} ({sizes})")
    return EXIT_OK


def _selected_examples(args: argparse.Namespace):
    episodes = load_corpus(args.corpus)
    index = examples_by_id(episodes)
    if getattr(args, "sample", None):
        if not args.blocks_file:
            raise ValueError("--sample requires --blocks-file")
        _, assignment = read_blocks_json(args.blocks_file)
        for ex_id, block_id in assignment.items():
            if ex_id in index:
                index[ex_id].block_id = block_id
        blocks: dict[int, list] = {}
        for ex in index.values():
            if ex.block_id is not None:
                blocks.setdefault(ex.block_id, []).append(ex)
        selected = []
        for block_id in sorted(blocks):
            block = DomainBlock(
                block_id=block_id,
                api_names=frozenset(ex.expected.name for ex in blocks[block_id]),
                examples=blocks[block_id],
            )
            selected.extend(sample_eval_subset(block, args.sample, args.sample_seed))
        return {ex.id: ex for ex in selected}
    return index


def cmd_render(args: argparse.Namespace) -> int:
    template = _load_template(args.template)
    examples = _selected_examples(args)
    ordered = sorted(examples)
    prompts = [render_prompt(examples[ex_id], args.condition, template) for ex_id in ordered]
    targets = {ex_id: render_call(examples[ex_id].expected) for ex_id in ordered}
    export_rendered_jsonl(args.out, prompts, targets)
    print(f"wrote {args.out} ({len(prompts)} prompts, condition {args.condition.value})")
    return EXIT_OK


def cmd_generate(args: argparse.Namespace) -> int:
    prompts, _ = read_rendered_jsonl(args.prompts)
    if args.import_file:
        records = import_completions(args.import_file, prompts=prompts, strict=args.strict)
        write_completions_jsonl(args.out, records)
        print(f"wrote {args.out} ({len(records)} imported records)")
        return EXIT_OK
    if not args.base_url or not args.model or args.stage is None:
        raise ValueError("endpoint mode needs --base-url, --model, and --stage")
    cache = CompletionCache(args.cache_dir) if args.cache_dir else None
    result = batch_generate(prompts, _endpoint_config(args), args.stage, cache)
    write_completions_jsonl(args.out, result.ok_records)
    if result.failures:
        for failure in result.failures:
            print(f"failed: {failure.example_id}: {failure.error}", file=sys.stderr)
        raise TransportError(f"{len(result.failures)} of {len(prompts)} completions failed")
    print(f"wrote {args.out} ({len(result.ok_records)} completions)")
    return EXIT_OK


def cmd_score(args: argparse.Namespace) -> int:
    episodes = load_corpus(args.corpus)
    index = examples_by_id(episodes)
    _, assignment = read_blocks_json(args.blocks_file)
    for ex_id, block_id in assignment.items():
        if ex_id in index:
            index[ex_id].block_id = block_id
    prompts = None
    if args.prompts:
        prompts, _ = read_rendered_jsonl(args.prompts)
    completions = []
    for path in args.completions:
        completions.extend(import_completions(path, prompts=prompts, strict=args.strict))
    if args.condition:
        completions = [c for c in completions if c.condition == args.condition.value]
    records = score_completions(completions, index)
    records.sort(key=lambda r: (r.stage, r.block_id, r.example_id))
    write_scores_jsonl(args.out, records)
    if args.categories:
        write_category_csv(args.categories, records)
    print(f"wrote {args.out} ({len(records)} score records)")
    return EXIT_OK


def cmd_matrix(args: argparse.Namespace) -> int:
    records = []
    for path in args.scores:
        records.extend(read_scores_jsonl(path))
    if not records:
        raise AggregationError("no score records found")
    T = args.blocks or max(r.block_id for r in records)
    stream = StreamSpec(T=T, block_order=tuple(args.block_order or ()), seed=args.seed)
    scores = block_scores_by_stage(records)
    rows = stage_rows(scores, stream, args.metric)
    if not rows:
        raise MetricsError("no stage has scores for every block; cannot build a matrix")
    write_matrix_csv(args.out, T, rows, block_ids=stream.block_order)
    print(f"wrote {args.out} (metric {args.metric}, stages {sorted(rows)})")
    return EXIT_OK


def cmd_summary(args: argparse.Namespace) -> int:
    T, rows, _ = read_matrix_csv(args.matrix)
    matrix, baseline = matrix_from_rows(rows, T)
    if baseline is None:
        if not args.baseline:
            raise MetricsError(
                "matrix has no stage 0 row; provide --baseline for forward transfer"
            )
        _, baseline_rows, _ = read_matrix_csv(args.baseline)
        if 0 in baseline_rows:
            values = baseline_rows[0]
        elif len(baseline_rows) == 1:
            values = next(iter(baseline_rows.values()))
        else:
            raise MetricsError("baseline CSV must hold exactly one row (stage 0)")
        baseline = BaselineVector(tuple(values))
    summary = summarize(matrix, baseline)
    payload = json.dumps(summary.to_dict(), indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(payload, encoding="utf-8")
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(payload)
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    conditions = [_condition(tag) for tag in str(args.conditions).split(",") if tag.strip()]
    stream = StreamSpec(
        T=args.blocks,
        block_order=tuple(args.block_order or ()),
        seed=args.seed,
        sample_size=args.sample,
    )
    endpoint = None
    stages: list[int] = args.stages or []
    if args.base_url:
        if not args.model:
            raise ValueError("endpoint mode needs --model")
        endpoint = _endpoint_config(args)
        stages = stages or [stream.T]
    tokenizer_cmd = shlex.split(args.tokenizer_cmd) if args.tokenizer_cmd else None
    out = run_report(
        corpus_path=args.corpus,
        out_dir=args.out,
        stream=stream,
        conditions=conditions,
        import_paths=args.imports or [],
        endpoint=endpoint,
        stages=stages,
        cache_dir=args.cache_dir,
        template=_load_template(args.template),
        tokenizer_cmd=tokenizer_cmd,
        strict_import=args.strict,
    )
    print(f"report written to {out}")
    return EXIT_OK


def cmd_parse(args: argparse.Namespace) -> int:
    for line in sys.stdin:
        text = line.rstrip("\n")
        result = parse_first_call(text)
        if isinstance(result, ParsedCall):
            payload = {
                "ok": True,
                "name": result.call.name,
                "params": [list(p) for p in result.call.params],
                "normalized": normalize_params(result.call),
                "span": list(result.span),
            }
        else:
            payload = {"ok": False, "reason": result.reason.value, "offset": result.offset}
        print(json.dumps(payload))
    return EXIT_OK


def cmd_fixtures(args: argparse.Namespace) -> int:
    paths = write_reference_fixture(args.out)
    for name, path in paths.items():
        print(f"{name}: {path}")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser, registry = build_parser()
    args = parser.parse_args(argv)
    sub = registry[args.command]
    try:
        _apply_config(args, sub)
        _require(args, sub)
        return args.func(args)
    except (FileNotFoundError, IngestionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (TransportError, EndpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ENDPOINT
    except StaleCompletionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STALE
    except (
        PartitionError,
        CorpusError,
        MetricsError,
        AggregationError,
        NormalizationError,
        ReportError,
        ValueError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except SystemExit:
        raise
    except Exception as exc:  # noqa: BLE001 - last-resort diagnostic
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
