"""Batch command-line entry points: corpus validation, adversarial splits,
task-sample construction, chain-of-experts runs, and metric evaluation.

Every run writes its fully resolved configuration next to its outputs so any
result can be reproduced from the emitted files alone. Exit codes: 0 success,
1 validation or --strict failure, 2 I/O or configuration error, 3 provider
failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from . import coe, corpus, metrics, providers, splitting, tasks

MONOTONE_DIRECTIONS = {"ND": "desc", "LB": "asc", "MP": "asc"}

STRATEGY_NAMES = {"nd": "ND", "lb": "LB", "mp": "MP"}

TASK_NAMES = {
    "action-cls": "action_cls",
    "conseq-cls": "conseq_cls",
    "action-gen": "action_gen",
    "conseq-gen": "conseq_gen",
    "norm-gen": "norm_gen",
}

COE_STRATEGIES = {
    "action-ranking": "action_ranking",
    "abductive-refinement": "abductive_refinement",
    "conseq-ranking": "conseq_ranking",
    "iterative-refinement": "iterative_refinement",
    "norm-synthetic": "norm_synthetic",
}


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _emit_config(out_dir: Path, config: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_json(out_dir / "run_config.json", config)


def _parse_ratios(text: str) -> tuple[int, int, int]:
    parts = text.split(":")
    if len(parts) != 3:
        raise ValueError(f"ratios must be train:dev:test, got {text!r}")
    ratios = tuple(int(p) for p in parts)
    if any(r < 0 for r in ratios) or sum(ratios) <= 0:
        raise ValueError(f"ratios must be non-negative with a positive sum, got {text!r}")
    return ratios


# ---------------------------------------------------------------------------
# validate


def cmd_validate(args) -> int:
    violations = []
    seen_ids: dict[str, int] = {}
    with open(args.corpus, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                story = corpus._story_from_record(record, line_no)
            except (json.JSONDecodeError, corpus.CorpusError) as exc:
                violations.append(f"line {line_no}: {exc}")
                continue
            if story.id in seen_ids:
                violations.append(
                    f"line {line_no}: duplicate id {story.id!r} (first on line {seen_ids[story.id]})"
                )
            else:
                seen_ids[story.id] = line_no
    for message in violations:
        print(message)
    print(f"{len(seen_ids)} valid stories, {len(violations)} violations")
    return 1 if violations else 0


# ---------------------------------------------------------------------------
# split


def _monotonicity_ok(report: splitting.SplitReport, strategy: str) -> bool:
    means = report.per_partition_mean
    if MONOTONE_DIRECTIONS[strategy] == "desc":
        return means["test"] >= means["dev"] >= means["train"]
    return means["test"] <= means["dev"] <= means["train"]


def cmd_split(args) -> int:
    stories = corpus.load_corpus(args.corpus)
    ratios = _parse_ratios(args.ratios)
    strategy = STRATEGY_NAMES[args.strategy]
    embedder_url = args.embedder
    if strategy == "ND":
        if embedder_url == "mock":
            embedder_url = f"mock:embed?dim={args.embed_dim}&seed={args.seed}"
        endpoint = providers.ProviderEndpoint(role=providers.EMBEDDER_ROLE, url=embedder_url)
        assignment = splitting.split_by_norm_distance(
            stories, providers.EndpointEmbedder(endpoint), args.k, ratios, workers=args.workers
        )
    elif strategy == "LB":
        assignment = splitting.split_by_lexical_bias(
            stories, splitting.default_lemmatizer, args.target, args.k, ratios
        )
    else:
        assignment = splitting.split_by_minimal_pairs(stories, args.target, ratios)

    report = splitting.split_report(assignment, stories)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    groups = splitting.stories_by_partition(assignment, stories)
    for partition, members in groups.items():
        corpus.save_corpus(members, str(out_dir / f"{partition}.jsonl"))
    _write_json(
        out_dir / "split_report.json",
        {
            "strategy": strategy,
            "target_field": assignment.target_field,
            "ratios": list(ratios),
            "k": args.k,
            "seed": args.seed,
            "sizes": {p: len(m) for p, m in groups.items()},
            "per_partition_mean": report.per_partition_mean,
        },
    )
    _emit_config(
        out_dir,
        {
            "command": "split",
            "corpus": args.corpus,
            "strategy": args.strategy,
            "target": args.target,
            "ratios": args.ratios,
            "k": args.k,
            "seed": args.seed,
            "embedder": embedder_url if strategy == "ND" else None,
            "workers": args.workers,
            "strict": args.strict,
        },
    )
    print(json.dumps(report.per_partition_mean, sort_keys=True))
    if args.strict and not _monotonicity_ok(report, strategy):
        print(f"strict check failed: {strategy} partition means are not monotone", file=sys.stderr)
        return 1
    return 0


# ---------------------------------------------------------------------------
# tasks


def _build_samples(stories, task: str, setting: str):
    if task == "action_cls":
        return tasks.build_action_cls(stories, setting)
    if task == "conseq_cls":
        return tasks.build_conseq_cls(stories, setting)
    return tasks.build_gen_samples(stories, task, setting)


def cmd_tasks(args) -> int:
    task = TASK_NAMES[args.task]
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    sources: dict[str, str] = {}
    if args.splits:
        for partition in splitting.PARTITIONS:
            sources[partition] = str(Path(args.splits) / f"{partition}.jsonl")
    else:
        sources["all"] = args.corpus
    counts = {}
    for name, path in sources.items():
        stories = corpus.load_corpus(path)
        samples = _build_samples(stories, task, args.setting)
        tasks.write_samples(samples, str(out_dir / f"{name}.{task}.jsonl"))
        counts[name] = len(samples)
    _emit_config(
        out_dir,
        {
            "command": "tasks",
            "task": args.task,
            "setting": args.setting,
            "corpus": args.corpus,
            "splits": args.splits,
            "counts": counts,
        },
    )
    print(json.dumps(counts, sort_keys=True))
    return 0


# ---------------------------------------------------------------------------
# coe


def _load_chain_config(args) -> coe.ChainConfig:
    raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
    decode_raw = dict(raw.get("decode", {}))
    if args.seed is not None:
        decode_raw["seed"] = args.seed
    decode = providers.DecodeParams(**decode_raw)
    strategy = COE_STRATEGIES[args.strategy]
    endpoints = {
        role: providers.ProviderEndpoint(role=role, url=url, decode=decode)
        for role, url in raw["endpoints"].items()
    }
    judge = None
    if raw.get("judge"):
        judge = providers.ProviderEndpoint(role=raw["judge"]["role"], url=raw["judge"]["url"])
    return coe.ChainConfig(
        strategy=strategy,
        endpoints=endpoints,
        decode=decode,
        target_orientation=raw.get("target_orientation", "n/a"),
        judge=judge,
    )


def _load_coe_samples(path: str):
    """A sample file holds either TaskSample records or raw story records."""
    with open(path, encoding="utf-8") as handle:
        first = ""
        for line in handle:
            if line.strip():
                first = line
                break
    if not first:
        raise coe.ChainError(f"sample file {path!r} is empty")
    keys = set(json.loads(first))
    if "sample_id" in keys:
        return tasks.read_samples(path)
    return corpus.load_corpus(path)


def cmd_coe(args) -> int:
    cfg = _load_chain_config(args)
    samples = _load_coe_samples(args.samples)
    traces, summary = coe.run_batch(samples, cfg, workers=args.workers)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    coe.write_traces(traces, str(out_dir / "traces.jsonl"))
    _write_json(out_dir / "summary.json", summary)
    _emit_config(
        out_dir,
        {
            "command": "coe",
            "strategy": args.strategy,
            "config": args.config,
            "samples": args.samples,
            "seed": cfg.decode.seed,
            "n": cfg.decode.n,
            "top_p": cfg.decode.top_p,
            "max_new_tokens": cfg.decode.max_new_tokens,
            "target_orientation": cfg.target_orientation,
            "workers": args.workers,
        },
    )
    print(json.dumps(summary, sort_keys=True))
    return 0


# ---------------------------------------------------------------------------
# eval


def _read_lines(path: str) -> list[str]:
    with open(path, encoding="utf-8") as handle:
        return [line.rstrip("\n") for line in handle if line.strip()]


def cmd_eval_gen(args) -> int:
    known = {"bleu", "rouge", "diversity"}
    wanted = [m.strip() for m in args.metrics.split(",") if m.strip()]
    unknown = [m for m in wanted if m not in known]
    if unknown:
        raise ValueError(f"unknown metric(s) {unknown}; choose from {sorted(known)}")
    hyps = _read_lines(args.hyp)
    results: dict[str, float] = {}
    if "bleu" in wanted or "rouge" in wanted:
        if not args.ref:
            raise ValueError("--ref is required for bleu/rouge")
        refs = _read_lines(args.ref)
        if len(hyps) != len(refs):
            raise ValueError(f"{len(hyps)} hypotheses vs {len(refs)} references")
        pairs = [metrics.EvalPair(h, (r,)) for h, r in zip(hyps, refs)]
        if "bleu" in wanted:
            results["bleu"] = metrics.corpus_bleu(pairs)
        if "rouge" in wanted:
            results["rouge_l"] = sum(metrics.rouge_l(p) for p in pairs) / len(pairs)
    if "diversity" in wanted:
        results["diversity"] = metrics.joint_ngram_diversity(hyps)
    payload = {
        "metrics": results,
        "config": {"command": "eval gen", "hyp": args.hyp, "ref": args.ref, "metrics": wanted},
    }
    print(json.dumps(payload, sort_keys=True))
    if args.out:
        _write_json(Path(args.out), payload)
    return 0


def cmd_eval_cls(args) -> int:
    predictions = _read_lines(args.pred)
    gold = _read_lines(args.gold)
    accuracy, f1 = metrics.cls_eval(predictions, gold, positive_label=args.positive_label)
    payload = {
        "metrics": {"accuracy": accuracy, "f1": f1},
        "config": {
            "command": "eval cls",
            "pred": args.pred,
            "gold": args.gold,
            "positive_label": args.positive_label,
        },
    }
    print(json.dumps(payload, sort_keys=True))
    if args.out:
        _write_json(Path(args.out), payload)
    return 0


def cmd_eval_ratings(args) -> int:
    with open(args.csv, encoding="utf-8", newline="") as handle:
        rows = [
            [cell.strip() or None for cell in row]
            for row in csv.reader(handle)
            if any(cell.strip() for cell in row)
        ]
    alpha = metrics.krippendorff_alpha(rows)
    payload = {
        "metrics": {"krippendorff_alpha": alpha},
        "config": {"command": "eval ratings", "csv": args.csv},
    }
    print(json.dumps(payload, sort_keys=True))
    if args.out:
        _write_json(Path(args.out), payload)
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="coekit",
        description="Adversarial splits, task samples, and chain-of-experts decoding "
        "for branching norm-grounded narratives.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_validate = sub.add_parser("validate", help="validate a story corpus file")
    p_validate.add_argument("corpus")
    p_validate.set_defaults(func=cmd_validate)

    p_split = sub.add_parser("split", help="build an adversarial train/dev/test split")
    p_split.add_argument("corpus")
    p_split.add_argument("--strategy", required=True, choices=sorted(STRATEGY_NAMES))
    p_split.add_argument("--target", default="actions", choices=sorted(splitting.TARGET_FIELDS))
    p_split.add_argument("--ratios", default="10:1:1")
    p_split.add_argument("--k", type=int, default=None, help="clusters (nd) or lemmas (lb)")
    p_split.add_argument("--seed", type=int, required=True)
    p_split.add_argument("--embedder", default="mock", help="embedding endpoint url, or 'mock'")
    p_split.add_argument("--embed-dim", type=int, default=64)
    p_split.add_argument("--out", required=True)
    p_split.add_argument("--workers", type=int, default=1)
    p_split.add_argument("--strict", action="store_true", help="fail on non-monotone partition means")
    p_split.set_defaults(func=cmd_split)

    p_tasks = sub.add_parser("tasks", help="build classification/generation samples")
    source = p_tasks.add_mutually_exclusive_group(required=True)
    source.add_argument("--corpus")
    source.add_argument("--splits", help="directory holding train/dev/test.jsonl")
    p_tasks.add_argument("--task", required=True, choices=sorted(TASK_NAMES))
    p_tasks.add_argument("--setting", required=True)
    p_tasks.add_argument("--out", required=True)
    p_tasks.set_defaults(func=cmd_tasks)

    p_coe = sub.add_parser("coe", help="run a chain-of-experts decoding strategy")
    coe_sub = p_coe.add_subparsers(dest="coe_command", required=True)
    p_run = coe_sub.add_parser("run")
    p_run.add_argument("--strategy", required=True, choices=sorted(COE_STRATEGIES))
    p_run.add_argument("--config", required=True, help="chain config JSON")
    p_run.add_argument("--samples", required=True, help="TaskSample or story record file")
    p_run.add_argument("--out", required=True)
    p_run.add_argument("--seed", type=int, default=None, help="override decode seed")
    p_run.add_argument("--workers", type=int, default=1)
    p_run.set_defaults(func=cmd_coe)

    p_eval = sub.add_parser("eval", help="evaluate generations, classifications, or ratings")
    eval_sub = p_eval.add_subparsers(dest="eval_command", required=True)
    p_gen = eval_sub.add_parser("gen")
    p_gen.add_argument("--hyp", required=True)
    p_gen.add_argument("--ref")
    p_gen.add_argument("--metrics", default="bleu,rouge")
    p_gen.add_argument("--out")
    p_gen.set_defaults(func=cmd_eval_gen)
    p_cls = eval_sub.add_parser("cls")
    p_cls.add_argument("--pred", required=True)
    p_cls.add_argument("--gold", required=True)
    p_cls.add_argument("--positive-label", default="positive")
    p_cls.add_argument("--out")
    p_cls.set_defaults(func=cmd_eval_cls)
    p_ratings = eval_sub.add_parser("ratings")
    p_ratings.add_argument("--csv", required=True)
    p_ratings.add_argument("--out")
    p_ratings.set_defaults(func=cmd_eval_ratings)

    return parser


def _resolve_split_defaults(args) -> None:
    if args.command == "split" and args.k is None:
        args.k = (
            splitting.DEFAULT_CLUSTER_COUNT
            if args.strategy == "nd"
            else splitting.DEFAULT_LEMMA_COUNT
        )


def _provider_failure_in_chain(exc: BaseException) -> bool:
    seen = set()
    while exc is not None and id(exc) not in seen:
        if isinstance(exc, providers.ProviderError):
            return True
        seen.add(id(exc))
        exc = exc.__cause__ or exc.__context__
    return False


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _resolve_split_defaults(args)
    try:
        return args.func(args)
    except providers.ProviderError as exc:
        print(f"provider failure: {exc}", file=sys.stderr)
        return 3
    except (
        corpus.CorpusError,
        splitting.SplittingError,
        tasks.TaskError,
        coe.ChainError,
        metrics.MetricsError,
        ValueError,
        KeyError,
        OSError,
        json.JSONDecodeError,
    ) as exc:
        if _provider_failure_in_chain(exc):
            print(f"provider failure: {exc}", file=sys.stderr)
            return 3
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
