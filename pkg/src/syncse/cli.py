"""Command-line entry point wiring pools -> gateway -> synthesis -> trainer -> metrics.

Exit codes: 0 success, 1 usage error, 2 runtime failure.  Flag values beat
run-config values, which beat built-in defaults.  Secrets (API key) come only
from the environment, never from flags or config files.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from syncse import gateway as gw
from syncse import metrics, synthesis, trainer
from syncse.pools import PoolError, load_default_pools, load_pools
from syncse.textops import dedup, filter_max_words, normalize_sentence

_RUNTIME_ERRORS = (
    PoolError,
    gw.GatewayError,
    synthesis.SynthesisError,
    trainer.TrainerError,
    metrics.MetricsError,
    OSError,
    ValueError,
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# ---------------------------------------------------------------------------
# Run config
# ---------------------------------------------------------------------------

_CONFIG_KEYS = {
    "pools": str,
    "base_url": str,
    "model": str,
    "seed": int,
    "mode": str,
    "backend": str,
    "fixtures": list,
    "record": str,
    "out": str,
    "max_in_flight": int,
    "rate": (int, float),
    "prices": dict,
    "configs": dict,
}


def load_run_config(path: str | None) -> dict:
    if not path:
        return {}
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise UsageError(f"config {path}: top level must be an object")
    for key, value in raw.items():
        expected = _CONFIG_KEYS.get(key)
        if expected is None:
            raise UsageError(f"config {key}: unknown field")
        if not isinstance(value, expected):
            raise UsageError(f"config {key}: expected {expected}, got {type(value).__name__}")
    for stage, overrides in raw.get("configs", {}).items():
        if stage not in gw.STAGES:
            raise UsageError(f"config configs.{stage}: unknown stage")
        if not isinstance(overrides, dict):
            raise UsageError(f"config configs.{stage}: expected an object")
    for field_name, value in raw.get("prices", {}).items():
        if field_name not in ("input_per_1k", "output_per_1k"):
            raise UsageError(f"config prices.{field_name}: unknown field")
        if not isinstance(value, (int, float)):
            raise UsageError(f"config prices.{field_name}: expected a number")
    return raw


def _setting(args, config: dict, key: str, default):
    value = getattr(args, key, None)
    if value is not None:
        return value
    if key in config:
        return config[key]
    return default


def _stage_config(stage: str, config: dict, model: str | None):
    overrides = dict(config.get("configs", {}).get(stage, {}))
    if model is not None:
        overrides["model"] = model
    try:
        return gw.stage_config(stage, **overrides)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"config configs.{stage}: {exc}") from exc


def _load_pools(args, config):
    path = _setting(args, config, "pools", None)
    return load_pools(path) if path else load_default_pools()


def _open_ledger(out_dir: Path, config: dict) -> gw.CostLedger:
    prices = gw.PriceTable(**config.get("prices", {}))
    costs_path = out_dir / "costs.json"
    if costs_path.exists():
        ledger = gw.CostLedger.load(costs_path)
        ledger.prices = prices
        return ledger
    return gw.CostLedger(prices)


def _make_gateway(args, config, ledger) -> gw.ChatGateway:
    backend = _setting(args, config, "backend", "live")
    fixtures = getattr(args, "fixtures", None) or config.get("fixtures")
    record = _setting(args, config, "record", None)
    base_url = _setting(args, config, "base_url", None)
    try:
        return gw.make_gateway(
            backend,
            base_url=base_url,
            fixtures=fixtures,
            record_path=record,
            ledger=ledger,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_pools_validate(args) -> int:
    pools = load_pools(args.poolfile)
    print(
        f"{len(pools.positive_prompts)}/{len(pools.hard_negative_prompts)}/"
        f"{len(pools.unlabeled_prompts)}/{len(pools.caption_prompts)} prompts, "
        f"{len(pools.genres)} genres, {len(pools.topics)} topics"
    )
    counts = {kind: len(pools.exemplars_for(kind)) for kind in ("positive", "hard_negative", "unlabeled")}
    print(
        f"exemplars: {counts['positive']} positive, {counts['hard_negative']} hard_negative, "
        f"{counts['unlabeled']} unlabeled"
    )
    return 0


def cmd_synth_scratch(args) -> int:
    config = load_run_config(args.config)
    if args.n is None or args.n < 1:
        raise UsageError("--n must be a positive integer")
    out_dir = Path(_setting(args, config, "out", "run"))
    out_dir.mkdir(parents=True, exist_ok=True)
    pools = _load_pools(args, config)
    ledger = _open_ledger(out_dir, config)
    gateway = _make_gateway(args, config, ledger)
    seed = _setting(args, config, "seed", 0)
    mode = _setting(args, config, "mode", "pooled")
    model = _setting(args, config, "model", None)
    try:
        sentences = synthesis.generate_unlabeled(
            args.n,
            pools,
            gateway,
            seed,
            mode=mode,
            batch_size=args.batch_size,
            config=_stage_config("unlabeled", config, model),
            filter_limit=args.limit,
            dedup_sentences=not args.no_dedup,
        )
    except KeyboardInterrupt:
        ledger.save(out_dir / "costs.json")
        print("interrupted; ledger flushed", file=sys.stderr)
        return 2
    synthesis.write_sentences(sentences, out_dir / "sentences.jsonl")
    ledger.save(out_dir / "costs.json")
    print(f"wrote {len(sentences)} sentences to {out_dir / 'sentences.jsonl'}")
    return 0


def cmd_annotate(args) -> int:
    config = load_run_config(args.config)
    out_dir = Path(_setting(args, config, "out", "run"))
    out_dir.mkdir(parents=True, exist_ok=True)
    pools = _load_pools(args, config)
    ledger = _open_ledger(out_dir, config)
    gateway = _make_gateway(args, config, ledger)
    seed = _setting(args, config, "seed", 0)
    mode = _setting(args, config, "mode", "pooled")
    model = _setting(args, config, "model", None)
    items = synthesis.load_sentences(args.input)
    if not items:
        raise UsageError(f"{args.input} contains no sentences")
    if args.dedup:
        kept = []
        seen = set()
        for item in items:
            text = item.text if isinstance(item, synthesis.UnlabeledSentence) else item
            key = normalize_sentence(text)
            if key not in seen:
                seen.add(key)
                kept.append(item)
        items = kept
    try:
        manifest = synthesis.assemble_dataset(
            items,
            pools,
            gateway,
            seed,
            out_dir,
            mode=mode,
            k=args.k,
            positive_config=_stage_config("positive", config, model),
            negative_config=_stage_config("hard_negative", config, model),
            filter_limit=args.limit,
            max_in_flight=_setting(args, config, "max_in_flight", 1),
            rate=_setting(args, config, "rate", None),
        )
    except KeyboardInterrupt:
        ledger.save(out_dir / "costs.json")
        print("interrupted; ledger flushed", file=sys.stderr)
        return 2
    ledger.save(out_dir / "costs.json")
    print(f"wrote {manifest.n} triplets ({manifest.skipped} skipped) to {out_dir / 'data.jsonl'}")
    return 0


def _read_lines(path: str) -> list[str]:
    return [line for line in Path(path).read_text(encoding="utf-8").splitlines() if line.strip()]


def _write_lines(lines, path: str):
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def cmd_filter(args) -> int:
    lines = _read_lines(args.input)
    kept = filter_max_words(lines, args.limit)
    _write_lines(kept, args.output)
    print(f"kept {len(kept)}/{len(lines)} sentences (limit {args.limit} words)")
    return 0


def cmd_dedup(args) -> int:
    lines = _read_lines(args.input)
    kept = dedup(lines)
    _write_lines(kept, args.output)
    print(f"kept {len(kept)}/{len(lines)} sentences")
    return 0


def cmd_export_csv(args) -> int:
    synthesis.export_csv(args.data, args.output)
    print(f"wrote {args.output}")
    return 0


def cmd_train(args) -> int:
    config_kwargs = dict(
        temperature=args.tau,
        batch_size=args.batch_size,
        learning_rate=args.lr,
        epochs=args.epochs,
        keep_prob=args.keep_prob,
        seed=args.seed if args.seed is not None else 0,
        feature_dim=args.feature_dim,
        proj_dim=args.proj_dim,
    )
    try:
        train_config = trainer.TrainConfig(**config_kwargs)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    result = trainer.train(args.data, train_config, out_dir=args.out, embeddings=args.embeddings)
    final_loss = result.log[-1]["loss"] if result.log else float("nan")
    print(f"trained {len(result.log)} steps, final loss {final_loss:.6f}")
    print(f"checkpoint: {result.checkpoint_path}")
    return 0


def _eval_command(args, task: str) -> int:
    if task == "sts":
        report = metrics.eval_sts(args.checkpoint, args.files)
    else:
        report = metrics.eval_rerank(args.checkpoint, args.files)
    report_path = Path(args.report) if args.report else Path(args.checkpoint).parent / f"{task}_report.json"
    metrics.write_report(report, report_path)
    print(report.pretty())
    print(f"report: {report_path}")
    return 0


def cmd_eval_sts(args) -> int:
    return _eval_command(args, "sts")


def cmd_eval_rerank(args) -> int:
    return _eval_command(args, "rerank")


def cmd_cost_report(args) -> int:
    run_dir = Path(args.run_dir)
    costs_path = run_dir if run_dir.is_file() else run_dir / "costs.json"
    if not costs_path.exists():
        raise FileNotFoundError(f"no costs.json under {run_dir}")
    ledger = gw.CostLedger.load(costs_path)
    summary = ledger.summary()
    print(f"cost report for {costs_path}")
    stage_total = 0.0
    for stage, row in summary["stages"].items():
        print(
            f"  {stage:<14s} requests={row['requests']:<5d} "
            f"prompt_tokens={row['prompt_tokens']:<8d} completion_tokens={row['completion_tokens']:<8d} "
            f"cost=${row['cost']:.6f}"
        )
        stage_total += row["cost"]
    print(f"  {'total':<14s} requests={summary['requests']:<5d} failures={summary['failures']} "
          f"cost=${summary['total_cost']:.6f}")
    manifest_path = run_dir / "manifest.json" if run_dir.is_dir() else None
    if manifest_path and manifest_path.exists():
        n = json.loads(manifest_path.read_text())["n"]
        if n:
            per_record = round(summary["total_cost"] / n, 6)
            print(f"  per-triplet cost: ${per_record:.6f} (${per_record * 1000:.2f} per 1,000)")
    return 0


def cmd_dataset_validate(args) -> int:
    target = Path(args.path)
    data_path = target / "data.jsonl" if target.is_dir() else target
    manifest_path = data_path.parent / "manifest.json"
    records = synthesis.load_dataset(data_path)
    problems = []
    manifest = None
    if manifest_path.exists():
        manifest = json.loads(manifest_path.read_text())
        if manifest["n"] != len(records):
            problems.append(f"manifest n={manifest['n']} but data file has {len(records)} records")
    limit = manifest.get("filter_limit") if manifest else None
    pools = load_pools(args.pools) if args.pools else None
    if pools is not None and manifest and manifest.get("pool_hash") and pools.source_hash != manifest["pool_hash"]:
        problems.append("pool file hash differs from the manifest's pool_hash")
    for i, record in enumerate(records):
        for fieldname in ("sent0", "sent1", "hard_neg"):
            if limit is not None and len(record[fieldname].split()) > limit:
                problems.append(f"record {i}: {fieldname} exceeds {limit} words")
        prov = record.get("provenance", {})
        if pools is not None and prov:
            if pools.find_prompt(prov.get("positive_prompt_id", "")) is None:
                problems.append(f"record {i}: unknown positive_prompt_id")
            if pools.find_prompt(prov.get("negative_prompt_id", "")) is None:
                problems.append(f"record {i}: unknown negative_prompt_id")
            for kind, ids in prov.get("exemplar_ids", {}).items():
                for ex_id in ids:
                    if pools.find_exemplar(kind, ex_id) is None:
                        problems.append(f"record {i}: unknown {kind} exemplar id '{ex_id}'")
    if problems:
        for problem in problems[:20]:
            print(f"FAIL {problem}", file=sys.stderr)
        print(f"{len(problems)} problem(s) in {data_path}", file=sys.stderr)
        return 2
    print(f"ok: {len(records)} records in {data_path}" + (" (manifest consistent)" if manifest else ""))
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _add_gateway_flags(parser):
    parser.add_argument("--config", help="run config JSON file")
    parser.add_argument("--pools", help="pool file (default: bundled pools)")
    parser.add_argument("--backend", choices=["live", "record", "replay"], help="LLM backend mode")
    parser.add_argument("--fixtures", nargs="+", help="fixture JSONL files for replay")
    parser.add_argument("--record", help="fixture JSONL to append recordings to")
    parser.add_argument("--base-url", dest="base_url", help="endpoint base URL override")
    parser.add_argument("--model", help="model name override")
    parser.add_argument("--seed", type=int, help="master seed (default 0)")
    parser.add_argument("--out", help="output directory (default ./run)")


def build_parser() -> _Parser:
    parser = _Parser(prog="syncse", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    pools_parser = sub.add_parser("pools", help="pool file operations")
    pools_sub = pools_parser.add_subparsers(dest="pools_command", required=True)
    validate = pools_sub.add_parser("validate", help="validate a pool file and print a summary")
    validate.add_argument("poolfile")
    validate.set_defaults(func=cmd_pools_validate)

    synth_parser = sub.add_parser("synth", help="generate unlabeled sentences")
    synth_sub = synth_parser.add_subparsers(dest="synth_command", required=True)
    scratch = synth_sub.add_parser("scratch", help="genre/topic-conditioned sentence generation")
    scratch.add_argument("--n", type=int, required=True, help="number of sentences to produce")
    scratch.add_argument("--mode", choices=["pooled", "naive"], help="diversity controls on/off")
    scratch.add_argument("--batch-size", type=int, default=synthesis.DEFAULT_BATCH_SIZE)
    scratch.add_argument("--limit", type=int, default=synthesis.DEFAULT_WORD_LIMIT,
                         help="max words per sentence")
    scratch.add_argument("--no-dedup", action="store_true", help="keep near-duplicate generations")
    _add_gateway_flags(scratch)
    scratch.set_defaults(func=cmd_synth_scratch)

    annotate = sub.add_parser("annotate", help="annotate sentences into triplets")
    annotate.add_argument("--input", required=True, help="sentences JSONL or plain text lines")
    annotate.add_argument("--mode", choices=["pooled", "naive"], help="vary prompts or fix them")
    annotate.add_argument("--k", type=int, default=synthesis.DEFAULT_SHOTS, help="few-shot exemplar count")
    annotate.add_argument("--limit", type=int, default=synthesis.DEFAULT_WORD_LIMIT)
    annotate.add_argument("--dedup", action="store_true", help="drop duplicate inputs first")
    annotate.add_argument("--max-in-flight", dest="max_in_flight", type=int)
    annotate.add_argument("--rate", type=float, help="max requests per second")
    _add_gateway_flags(annotate)
    annotate.set_defaults(func=cmd_annotate)

    filter_parser = sub.add_parser("filter", help="drop sentences over the word limit")
    filter_parser.add_argument("--input", required=True)
    filter_parser.add_argument("--output", required=True)
    filter_parser.add_argument("--limit", type=int, default=synthesis.DEFAULT_WORD_LIMIT)
    filter_parser.set_defaults(func=cmd_filter)

    dedup_parser = sub.add_parser("dedup", help="drop duplicate sentences")
    dedup_parser.add_argument("--input", required=True)
    dedup_parser.add_argument("--output", required=True)
    dedup_parser.set_defaults(func=cmd_dedup)

    export_parser = sub.add_parser("export-csv", help="dataset JSONL to 3-column headerless CSV")
    export_parser.add_argument("--data", required=True)
    export_parser.add_argument("--output", required=True)
    export_parser.set_defaults(func=cmd_export_csv)

    train_parser = sub.add_parser("train", help="train the projection head")
    train_parser.add_argument("--data", required=True, help="triplet JSONL or CSV")
    train_parser.add_argument("--out", default="run", help="checkpoint/log directory")
    train_parser.add_argument("--epochs", type=int, default=3)
    train_parser.add_argument("--batch-size", type=int, default=64)
    train_parser.add_argument("--lr", type=float, default=1e-3)
    train_parser.add_argument("--tau", type=float, default=0.05, help="softmax temperature")
    train_parser.add_argument("--keep-prob", dest="keep_prob", type=float, default=0.9)
    train_parser.add_argument("--feature-dim", dest="feature_dim", type=int,
                              default=trainer.DEFAULT_FEATURE_DIM)
    train_parser.add_argument("--proj-dim", dest="proj_dim", type=int,
                              default=trainer.DEFAULT_PROJ_DIM)
    train_parser.add_argument("--seed", type=int, default=0)
    train_parser.add_argument("--embeddings", help="precomputed embedding JSONL of {id, vector}")
    train_parser.set_defaults(func=cmd_train)

    eval_parser = sub.add_parser("eval", help="evaluate a checkpoint")
    eval_sub = eval_parser.add_subparsers(dest="eval_command", required=True)
    sts = eval_sub.add_parser("sts", help="Spearman correlation on pair files")
    sts.add_argument("--checkpoint", required=True)
    sts.add_argument("--report", help="report JSON path")
    sts.add_argument("files", nargs="+", help="pair JSONL files")
    sts.set_defaults(func=cmd_eval_sts)
    rerank = eval_sub.add_parser("rerank", help="mean average precision on rerank files")
    rerank.add_argument("--checkpoint", required=True)
    rerank.add_argument("--report", help="report JSON path")
    rerank.add_argument("files", nargs="+", help="rerank JSONL files")
    rerank.set_defaults(func=cmd_eval_rerank)

    cost_parser = sub.add_parser("cost", help="spend accounting")
    cost_sub = cost_parser.add_subparsers(dest="cost_command", required=True)
    report = cost_sub.add_parser("report", help="print per-stage dollar totals for a run")
    report.add_argument("run_dir")
    report.set_defaults(func=cmd_cost_report)

    dataset_parser = sub.add_parser("dataset", help="dataset file operations")
    dataset_sub = dataset_parser.add_subparsers(dest="dataset_command", required=True)
    ds_validate = dataset_sub.add_parser("validate", help="check manifest/data consistency")
    ds_validate.add_argument("path", help="run directory or data.jsonl")
    ds_validate.add_argument("--pools", help="pool file to resolve provenance ids against")
    ds_validate.set_defaults(func=cmd_dataset_validate)

    return parser


def dispatch(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except _RUNTIME_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main():
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
