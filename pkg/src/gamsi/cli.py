"""Command-line front end: data generation, training, eval, diagnostics.

Exit codes: 0 success, 2 usage or configuration problem, 3 numeric failure,
4 artifact incompatibility (checkpoint, vocab, file format), 5 diagnostic
check failure.

GAMSI_THREADS caps the BLAS thread pools; it must take effect before numpy
first loads, which is why this module pins the environment at import time
and defers every numeric import until after that.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from collections import Counter
from pathlib import Path


def _cap_threads() -> None:
    n = os.environ.get("GAMSI_THREADS")
    if not n:
        return
    for var in (
        "OMP_NUM_THREADS",
        "OPENBLAS_NUM_THREADS",
        "MKL_NUM_THREADS",
        "NUMEXPR_NUM_THREADS",
        "VECLIB_MAXIMUM_THREADS",
    ):
        os.environ[var] = n


_cap_threads()


def _resolve_config(args):
    from .config import load_config, preset

    if getattr(args, "config", None):
        return load_config(args.config)
    return preset(getattr(args, "preset", "toy") or "toy")


def cmd_gen_data(args) -> int:
    from .config import RunConfig  # noqa: F401  (type only)
    from .formats import write_expert_file
    from .synth import (
        gen_sample,
        mixture_for_stage,
        synth_metric_expert,
        synth_struct_expert,
        task_schedule,
    )

    cfg = _resolve_config(args)
    count = args.count if args.count is not None else cfg.data.eval_count
    seed = args.seed if args.seed is not None else cfg.data.base_seed
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    schedule = task_schedule(count, mixture_for_stage(args.stage))
    k_v, d_e = cfg.heads.k_v, cfg.heads.d_e
    lines = []
    for index, task in enumerate(schedule):
        qa = gen_sample(seed, index, task)
        files = {}
        for pathway, maker in (
            ("metric", synth_metric_expert),
            ("structural", synth_struct_expert),
        ):
            name = f"sample_{index:05d}.{pathway}.evgf"
            write_expert_file(
                maker(qa.scene, k_v, d_e, cfg.data.expert_seed), out / name
            )
            files[pathway] = name
        lines.append(
            json.dumps(
                {
                    "seed": qa.scene.seed,
                    "task_type": qa.task_type,
                    "question_tokens": qa.question,
                    "answer_tokens": qa.answer,
                    "expert_files": files,
                },
                sort_keys=True,
            )
        )
    (out / "manifest.jsonl").write_text("".join(line + "\n" for line in lines))
    for task, n in sorted(Counter(schedule).items()):
        print(f"{task}: {n}")
    print(f"total: {len(schedule)} samples -> {out / 'manifest.jsonl'}")
    return 0


def cmd_train(args) -> int:
    from .config import save_config
    from .errors import ConfigError
    from .formats import load_into_model, model_state, save_checkpoint
    from .synth import build_dataset, mixture_for_stage
    from .training import train_stage

    cfg = _resolve_config(args)
    stage = args.stage
    if stage == 2 and not args.resume and not args.from_scratch:
        raise ConfigError("stage 2 continues a stage-1 run: pass --resume or --from-scratch")
    model = cfg.build_model()
    if args.resume:
        load_into_model(model, args.resume)
    tc = cfg.stage_config(stage)
    count = cfg.data.stage1_count if stage == 1 else cfg.data.stage2_count
    data = build_dataset(
        count,
        cfg.data.base_seed + (stage - 1) * 7919,
        mixture_for_stage(stage),
        k_v=cfg.heads.k_v,
        d_e=cfg.heads.d_e,
        expert_seed=cfg.data.expert_seed,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / f"metrics_stage{stage}.csv"
    if csv_path.exists():
        csv_path.unlink()
    reports, _ = train_stage(model, tc, data, csv_path=csv_path)
    ckpt = out / f"checkpoint_stage{stage}.gams"
    save_checkpoint(model_state(model), ckpt)
    save_config(cfg, out / "config.json")
    if reports:
        last = reports[-1]
        print(
            f"stage {stage}: {len(reports)} steps, final total {last.total:.4f} "
            f"(lm {last.lm:.4f}, align {last.align:.4f}), answer acc {last.ans_acc:.3f}"
        )
    else:
        print(f"stage {stage}: 0 steps (epochs=0), checkpoint is the initialization")
    print(f"checkpoint: {ckpt}")
    print(f"metrics: {csv_path}")
    return 0


def _load_manifest_samples(path: Path, vocab: int):
    from .errors import CompatibilityError, FormatError
    from .synth import QASample, TASKS, gen_scene

    manifest = path / "manifest.jsonl" if path.is_dir() else path
    if not manifest.exists():
        raise FormatError(f"no manifest at {manifest}", offset=0)
    samples = []
    for ln, line in enumerate(manifest.read_text().splitlines()):
        if not line.strip():
            continue
        try:
            doc = json.loads(line)
        except json.JSONDecodeError as e:
            raise FormatError(f"manifest line {ln} is not JSON: {e}", offset=ln) from None
        task = doc["task_type"]
        if task not in TASKS:
            raise CompatibilityError(f"manifest line {ln}: unknown task {task!r}")
        tokens = list(doc["question_tokens"]) + list(doc["answer_tokens"])
        bad = [t for t in tokens if not 0 <= int(t) < vocab]
        if bad:
            raise CompatibilityError(
                f"manifest line {ln}: token ids {bad} outside model vocab {vocab}"
            )
        samples.append(
            QASample(
                scene=gen_scene(doc["seed"]),
                task_type=task,
                question=[int(t) for t in doc["question_tokens"]],
                answer=[int(t) for t in doc["answer_tokens"]],
            )
        )
    return samples


def cmd_eval(args) -> int:
    from .formats import load_into_model
    from .training import evaluate_qa

    cfg = _resolve_config(args)
    model = cfg.build_model()
    load_into_model(model, args.checkpoint)
    samples = _load_manifest_samples(Path(args.data), model.cfg.vocab)
    result = evaluate_qa(model, samples)
    for task, acc in result["per_task"].items():
        print(f"{task}: {acc:.4f}")
    print(f"macro: {result['macro']:.4f} over {result['count']} samples")
    if args.report:
        Path(args.report).write_text(json.dumps(result, indent=2, sort_keys=True) + "\n")
        print(f"report: {args.report}")
    return 0


def cmd_diag(args) -> int:
    from .diagnostics import run_diagnostics
    from .formats import load_into_model

    cfg = _resolve_config(args)
    model = cfg.build_model()
    if args.checkpoint:
        load_into_model(model, args.checkpoint)
    report = run_diagnostics(model, probe_count=args.probes)
    print(report.summary())
    return 0 if report.ok else 5


def cmd_inspect_mask(args) -> int:
    from .masking import build_layout, build_mask, mask_to_json, render_mask_grid, verify_mask

    layout = build_layout(args.frames, args.patches, args.queries, args.question, args.answer)
    mask = build_mask(layout)
    print(render_mask_grid(mask, layout))
    print(json.dumps(mask_to_json(mask, layout), sort_keys=True))
    print(verify_mask(mask, layout).summary())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gamsi",
        description="Dual-pathway spatial reasoning model: data, training, eval, diagnostics.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config_flags(p):
        p.add_argument("--config", help="JSON run config path (overrides --preset)")
        p.add_argument(
            "--preset", choices=("toy", "paper"), default="toy",
            help="built-in config when no --config is given (default: toy)",
        )

    p = sub.add_parser("gen-data", help="write a QA manifest plus expert feature files")
    add_config_flags(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--count", type=int, help="sample count (default: config eval_count)")
    p.add_argument("--seed", type=int, help="base seed (default: config base_seed)")
    p.add_argument(
        "--stage", type=int, choices=(1, 2), default=2,
        help="mixture to draw from: stage 1 or stage 2 weighting (default 2)",
    )
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="run one curriculum stage")
    add_config_flags(p)
    p.add_argument("--stage", type=int, choices=(1, 2), required=True)
    p.add_argument("--out", required=True, help="output directory for checkpoint and metrics")
    p.add_argument("--resume", help="checkpoint to start from")
    p.add_argument(
        "--from-scratch", action="store_true",
        help="allow stage 2 without a stage-1 checkpoint",
    )
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="constrained greedy decoding accuracy on a manifest")
    add_config_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="manifest.jsonl or its directory")
    p.add_argument("--report", help="write the accuracy report JSON here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("diag", help="mask, contamination, gradient, and identity checks")
    add_config_flags(p)
    p.add_argument("--checkpoint", help="optional checkpoint to load first")
    p.add_argument("--probes", type=int, default=8, help="contamination probe count (default 8)")
    p.set_defaults(func=cmd_diag)

    p = sub.add_parser("inspect-mask", help="print the attention mask for a layout")
    p.add_argument("--frames", type=int, default=2)
    p.add_argument("--patches", type=int, default=4)
    p.add_argument("--queries", type=int, default=2)
    p.add_argument("--question", type=int, default=4)
    p.add_argument("--answer", type=int, default=1)
    p.set_defaults(func=cmd_inspect_mask)
    return parser


def main(argv=None) -> int:
    from .errors import (
        CompatibilityError,
        ConfigError,
        ContractError,
        DegenerateRowError,
        FormatError,
        NumericError,
    )

    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ContractError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (NumericError, DegenerateRowError) as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return 3
    except (CompatibilityError, FormatError) as e:
        print(f"compatibility error: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
