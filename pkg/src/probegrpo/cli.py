"""Command-line entry point.

Subcommands: train, compare, sweep, segment, probe, score-steps,
gen-corpus, export-curves.  Training-style commands write a RunManifest
into the output directory before doing any work, so a crashed run leaves
a manifest marked failed.  The output directory defaults to
$PROBEGRPO_OUT, then the current directory; --seed overrides the config
seed everywhere it appears.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .config import ALIASES, apply_overrides, load_config, save_config
from .errors import StateError
from .policy import init_params, load_params
from .signal_eval import score_corpus
from .tasks import (
    TASK_KINDS,
    generate_labeled_corpus,
    load_corpus,
    load_problems,
    write_corpus,
    write_problems,
)
from .trainer import TaskSpec, TrainConfig, compare, debug_dump_group, sweep, train
from .vocab import standard_vocab

_OUT_ENV = "PROBEGRPO_OUT"

# prefixes of diagnostics that already name their module
_MODULE_PREFIXES = (
    "advantage:",
    "config:",
    "harness:",
    "policy:",
    "progress:",
    "segmentation:",
    "signal_eval:",
    "tasks:",
    "trainer:",
    "vocab:",
)


@dataclass
class RunManifest:
    """What a run was and where it wrote; persisted before work starts."""

    config: dict
    task: dict
    seed: int
    code_version: str
    started_at: str
    outputs: list[str] = field(default_factory=list)
    status: str = "running"
    ended_at: str | None = None
    error: str | None = None

    def write(self, path: Path) -> None:
        path.write_text(json.dumps(self.__dict__, indent=2) + "\n", encoding="utf-8")


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _resolve_out(arg_out: str | None) -> Path:
    out = Path(arg_out or os.environ.get(_OUT_ENV) or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_base_config(args) -> TrainConfig:
    config = load_config(args.config) if args.config else TrainConfig()
    if getattr(args, "seed", None) is not None:
        config = replace(config, seed=args.seed)
        config.validate()
    return config


def _task_spec(args) -> TaskSpec:
    task = TaskSpec(kind=args.task, difficulty=args.difficulty)
    task.validate()
    return task


def _start_manifest(out: Path, config: TrainConfig, task: TaskSpec, outputs) -> RunManifest:
    manifest = RunManifest(
        config=config.to_dict(),
        task=task.to_dict(),
        seed=config.seed,
        code_version=__version__,
        started_at=_now(),
        outputs=[str(p) for p in outputs],
    )
    manifest.write(out / "manifest.json")
    return manifest


def _finish_manifest(out: Path, manifest: RunManifest) -> None:
    for ref in manifest.outputs:
        if not Path(ref).exists():
            manifest.status = "failed"
            manifest.error = f"harness: declared output missing: {ref}"
            manifest.ended_at = _now()
            manifest.write(out / "manifest.json")
            raise StateError(manifest.error)
    manifest.status = "complete"
    manifest.ended_at = _now()
    manifest.write(out / "manifest.json")


def _fail_manifest(out: Path, manifest: RunManifest, exc: Exception) -> None:
    manifest.status = "failed"
    manifest.error = str(exc)
    manifest.ended_at = _now()
    manifest.write(out / "manifest.json")


def _dump_json(data, out_path: str | None) -> None:
    text = json.dumps(data, indent=2, sort_keys=True)
    if out_path:
        Path(out_path).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _cmd_train(args) -> int:
    config = _load_base_config(args)
    task = _task_spec(args)
    out = _resolve_out(args.out)
    metrics_path = out / "metrics.jsonl"
    checkpoint_path = out / "checkpoint.bin"
    config_path = out / "config.cfg"
    save_config(config, config_path)
    manifest = _start_manifest(
        out, config, task, [metrics_path, checkpoint_path, config_path]
    )
    try:
        _, metrics = train(
            config, task, checkpoint_out=checkpoint_path, metrics_path=metrics_path
        )
    except Exception as exc:
        _fail_manifest(out, manifest, exc)
        raise
    _finish_manifest(out, manifest)
    last = metrics[-1]
    print(
        f"trained {len(metrics)} steps: accuracy {last.train_accuracy:.3f}, "
        f"mean response length {last.mean_response_len:.1f} -> {out}"
    )
    return 0


def _cmd_compare(args) -> int:
    config_a = _load_base_config(args)
    overrides = [item for chunk in args.b for item in chunk.split(",") if item]
    if not overrides:
        raise ValueError("config: compare needs at least one --b key=value override")
    config_b = apply_overrides(config_a, overrides)
    task = _task_spec(args)
    out = _resolve_out(args.out)
    report_path = out / "compare.json"
    manifest = _start_manifest(out, config_a, task, [report_path])
    try:
        result = compare(
            config_a,
            config_b,
            args.seeds,
            metrics_out=str(out),
            task_spec=task,
            threshold=args.threshold,
        )
        _dump_json(result, str(report_path))
    except Exception as exc:
        _fail_manifest(out, manifest, exc)
        raise
    _finish_manifest(out, manifest)
    for key, diffs in result["paired_differences"].items():
        print(f"{key}: paired a-b {diffs}")
    return 0


def _sweep_grid(args, config: TrainConfig):
    chosen = [
        name
        for name, value in (("alpha", args.alpha), ("n", args.n), (args.param, args.values))
        if value
    ]
    if len(chosen) != 1:
        raise ValueError(
            "config: sweep needs exactly one grid: --alpha, --n, or --param/--values"
        )
    if args.alpha:
        param, raw_values = "alpha", args.alpha
    elif args.n:
        param, raw_values = "n", args.n
    else:
        if not args.param:
            raise ValueError("config: --values requires --param")
        param, raw_values = args.param, args.values
    canonical = ALIASES.get(param, param)
    values = [
        getattr(apply_overrides(config, [f"{param}={raw}"]), canonical)
        for raw in raw_values.split(",")
    ]
    return canonical, values


def _cmd_sweep(args) -> int:
    config = _load_base_config(args)
    param, values = _sweep_grid(args, config)
    task = _task_spec(args)
    out = _resolve_out(args.out)
    report_path = out / "sweep.json"
    manifest = _start_manifest(out, config, task, [report_path])
    try:
        rows = sweep(
            config,
            param,
            values,
            args.seeds,
            metrics_out=str(out),
            task_spec=task,
            threshold=args.threshold,
        )
        _dump_json(rows, str(report_path))
    except Exception as exc:
        _fail_manifest(out, manifest, exc)
        raise
    _finish_manifest(out, manifest)
    for row in rows:
        print(
            f"{param}={row[param]}: median steps-to-threshold "
            f"{row['median_steps_to_threshold']}, median final accuracy "
            f"{row['median_final_accuracy']:.3f}"
        )
    return 0


def _debug_records(args) -> list[dict]:
    config = _load_base_config(args)
    task = _task_spec(args)
    if args.checkpoint:
        params, _ = load_params(args.checkpoint)
    else:
        params = init_params(
            standard_vocab().size,
            embed_dim=config.embed_dim,
            hidden_dim=config.hidden_dim,
            window=config.window,
            seed=config.seed,
        )
    return debug_dump_group(
        params, config, task, problem_seed=args.problem_seed, rng_seed=args.rng_seed
    )


def _write_records(records: list[dict], out_path: str | None) -> None:
    lines = "".join(json.dumps(r) + "\n" for r in records)
    if out_path:
        Path(out_path).write_text(lines, encoding="utf-8")
    else:
        sys.stdout.write(lines)


def _cmd_segment(args) -> int:
    keep = ("problem_id", "prompt", "tokens", "reward", "boundaries")
    records = [{k: r[k] for k in keep} for r in _debug_records(args)]
    _write_records(records, args.out)
    return 0


def _cmd_probe(args) -> int:
    _write_records(_debug_records(args), args.out)
    return 0


def _cmd_score_steps(args) -> int:
    params, _ = load_params(args.checkpoint)
    problems = load_problems(args.problems)
    corpus = load_corpus(args.corpus, problems)
    report = score_corpus(params, corpus, args.dead_band)
    _dump_json(report.to_dict(), args.out)
    return 0


def _cmd_gen_corpus(args) -> int:
    corpus = generate_labeled_corpus(
        args.count,
        args.corruption_rate,
        args.seed if args.seed is not None else 0,
        task_kind=args.task,
        difficulty=args.difficulty,
    )
    out = _resolve_out(args.out)
    problems = {item.problem.problem_id: item.problem for item in corpus}
    problems_path = out / "problems.jsonl"
    corpus_path = out / "steps.jsonl"
    write_problems(problems_path, problems.values())
    write_corpus(corpus_path, corpus)
    print(
        f"wrote {len(problems)} problems and {len(corpus)} labeled steps -> {out}"
    )
    return 0


def _cmd_export_curves(args) -> int:
    columns = (
        "step",
        "mean_reward",
        "train_accuracy",
        "mean_response_len",
        "grad_norm",
        "mean_entropy",
        "mean_abs_delta_c",
        "wall_ms",
    )
    rows = []
    with open(args.metrics, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                rows.append([rec[c] for c in columns])
            except (KeyError, json.JSONDecodeError) as exc:
                raise ValueError(
                    f"harness: {args.metrics}:{line_no}: bad metrics line ({exc})"
                ) from exc
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(
                ",".join(
                    str(v) if isinstance(v, int) else format(float(v), ".17g")
                    for v in row
                )
                + "\n"
            )
    print(f"wrote {len(rows)} rows -> {args.out}")
    return 0


# ---------------------------------------------------------------------------
# argument wiring
# ---------------------------------------------------------------------------


def _add_common(sub, *, seed=True, out=True, config=True, task=True) -> None:
    if config:
        sub.add_argument("--config", help="key=value or JSON config file")
    if seed:
        sub.add_argument("--seed", type=int, help="override the config seed")
    if out:
        sub.add_argument("--out", help=f"output directory (default ${_OUT_ENV} or .)")
    if task:
        sub.add_argument("--task", choices=TASK_KINDS, default="chain_add")
        sub.add_argument("--difficulty", type=int, default=3)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="probegrpo",
        description="Group-relative RL with confidence-probe process credit",
    )
    parser.add_argument("--version", action="version", version=__version__)
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("train", help="run one training config")
    _add_common(p)
    p.set_defaults(func=_cmd_train)

    p = subs.add_parser("compare", help="paired multi-seed A/B")
    _add_common(p)
    p.add_argument(
        "--b",
        action="append",
        default=[],
        metavar="KEY=VALUE[,KEY=VALUE...]",
        help="overrides defining arm B relative to the base config",
    )
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--threshold", type=float, default=0.9)
    p.set_defaults(func=_cmd_compare)

    p = subs.add_parser("sweep", help="grid over one config field")
    _add_common(p)
    p.add_argument("--alpha", help="comma-separated alpha grid")
    p.add_argument("--n", help="comma-separated cutpoints-per-segment grid")
    p.add_argument("--param", help="config field name for a generic grid")
    p.add_argument("--values", help="comma-separated values for --param")
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--threshold", type=float, default=0.9)
    p.set_defaults(func=_cmd_sweep)

    for name, fn, help_text in (
        ("segment", _cmd_segment, "dump segment boundaries for one sampled group"),
        ("probe", _cmd_probe, "dump probed confidences for one sampled group"),
    ):
        p = subs.add_parser(name, help=help_text)
        _add_common(p, out=False)
        p.add_argument("--checkpoint", help="policy checkpoint (default: fresh init)")
        p.add_argument("--problem-seed", type=int, default=0)
        p.add_argument("--rng-seed", type=int, default=0)
        p.add_argument("--out", help="output JSONL file (default stdout)")
        p.set_defaults(func=fn)

    p = subs.add_parser("score-steps", help="classify a labeled step corpus")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True, help="labeled steps JSONL")
    p.add_argument("--problems", required=True, help="problems JSONL")
    p.add_argument("--dead-band", type=float, default=0.0)
    p.add_argument("--out", help="report JSON file (default stdout)")
    p.set_defaults(func=_cmd_score_steps)

    p = subs.add_parser("gen-corpus", help="write a labeled step corpus")
    _add_common(p, config=False)
    p.add_argument("--count", type=int, default=200, help="number of problems")
    p.add_argument("--corruption-rate", type=float, default=0.5)
    p.set_defaults(func=_cmd_gen_corpus)

    p = subs.add_parser("export-curves", help="metrics JSONL to tidy CSV")
    p.add_argument("--metrics", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_export_curves)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, StateError, OSError) as exc:
        message = str(exc)
        if not message.startswith(_MODULE_PREFIXES):
            module = "config" if isinstance(exc, OSError) else "harness"
            message = f"{module}: {message}"
        print(f"probegrpo {args.command}: {message}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
