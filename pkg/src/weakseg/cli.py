"""Command-line surface: data generation, training, evaluation, sweeps,
variant comparison, and the gradient-check suite.

Exit codes: 0 success, 1 runtime failure (non-finite loss, I/O), 2 config or
argument parse errors.  Every command is deterministic given its seeds; all
output files are written atomically.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .config import ConfigError, ExperimentConfig, emit_config, parse_config
from .data import (
    DataError,
    apply_erosion,
    calibrate_erosion,
    gen_dataset,
    load_dataset,
    save_dataset,
)
from .gradsuite import TOLERANCE, run_suite
from .metrics import evaluate_samples
from .optim import OptimError
from .runs import RunJob, run_jobs, write_atomic
from .train import (
    VARIANTS,
    CheckpointError,
    TrainingError,
    infer_net_config,
    restore,
)


def _check_variants(names) -> None:
    for name in names:
        if name not in VARIANTS:
            raise ConfigError(
                f"unknown variant {name!r}; expected one of {', '.join(VARIANTS)}")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="weakseg",
        description="Weakly supervised segmentation lab: constrained and "
                    "adversarial losses on synthetic benchmarks.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("train", help="train one variant")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--variant", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="score a checkpoint on a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("sweep", help="one run per adversarial weight")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--variant", required=True)
    p.add_argument("--lambda-a", required=True,
                   help="comma-separated weights, e.g. 3e-4,6e-4,1e-3")
    p.add_argument("--out", default=None)

    sub.add_parser("gradcheck", help="finite-difference gradient suite")

    p = sub.add_parser("compare", help="train every (variant, seed) pair")
    p.add_argument("--data", required=True)
    p.add_argument("--variants", required=True, help="comma-separated variants")
    p.add_argument("--seeds", required=True, help="comma-separated integer seeds")
    p.add_argument("--config", default=None)
    p.add_argument("--out", default=None)
    return parser


def _cmd_gen_data(args) -> int:
    cfg = parse_config(args.config)
    seed = cfg.data_seed if args.seed is None else args.seed
    spec = cfg.shape_spec()
    total = cfg.n_train + cfg.n_test
    samples = gen_dataset(spec, total, seed)
    iterations, achieved = calibrate_erosion(
        samples[:cfg.n_train], cfg.target_ratio, cfg.erosion_element)
    samples = apply_erosion(samples, iterations, cfg.erosion_element)
    train, test = samples[:cfg.n_train], samples[cfg.n_train:]

    os.makedirs(args.out, exist_ok=True)
    save_dataset(train, os.path.join(args.out, "train"))
    save_dataset(test, os.path.join(args.out, "test"))
    lines = [
        f"seed={seed}",
        f"erosion_iterations={iterations}",
        f"achieved_ratio={achieved!r}",
        f"target_ratio={cfg.target_ratio!r}",
        f"train_ids={','.join(str(s.id) for s in train)}",
        f"test_ids={','.join(str(s.id) for s in test)}",
    ]
    write_atomic(os.path.join(args.out, "manifest.txt"), "\n".join(lines) + "\n")
    print(f"wrote {len(train)} train / {len(test)} test samples to {args.out} "
          f"(erosion x{iterations}, annotation ratio {achieved:.4%})")
    return 0


def _cmd_train(args) -> int:
    _check_variants([args.variant])
    cfg = parse_config(args.config)
    job = RunJob(config_text=emit_config(cfg), variant=args.variant,
                 data_dir=args.data, out_dir=args.out)
    summary = run_jobs([job])[0]
    print(f"{args.variant}: mean test dice {summary['mean_dice']:.4f}, "
          f"mean expansion {summary['mean_expansion']:.3f}")
    return 0


def _cmd_eval(args) -> int:
    data_dir = args.data
    test_dir = os.path.join(data_dir, "test")
    if os.path.isdir(test_dir):
        data_dir = test_dir
    samples = load_dataset(data_dir)
    side = samples[0].image.shape[0]
    net_cfg = infer_net_config(args.model, image_side=side)
    model = restore(args.model, net_cfg)
    report = evaluate_samples(model, samples)
    write_atomic(args.out, report.to_csv())
    print(report.summary_line())
    return 0


def _cmd_sweep(args) -> int:
    _check_variants([args.variant])
    cfg = parse_config(args.config)
    try:
        lambdas = [float(v) for v in args.lambda_a.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"--lambda-a: not a float list: {args.lambda_a!r}") from None
    if not lambdas:
        raise ConfigError("--lambda-a: empty weight list")
    out = args.out or cfg.output_dir
    text = emit_config(cfg)
    jobs = [RunJob(config_text=text, variant=args.variant, data_dir=args.data,
                   out_dir=os.path.join(out, f"lambda_{lam:g}"), lambda_a=lam)
            for lam in lambdas]
    results = run_jobs(jobs)
    lines = ["lambda_a,mean_dice,mean_soft_size"]
    for r in results:
        lines.append(f"{r['lambda_a']!r},{r['mean_dice']!r},{r['mean_soft_size']!r}")
    os.makedirs(out, exist_ok=True)
    write_atomic(os.path.join(out, "sweep.csv"), "\n".join(lines) + "\n")
    for r in results:
        print(f"lambda_a={r['lambda_a']:g}: dice {r['mean_dice']:.4f}, "
              f"soft size {r['mean_soft_size']:.1f}")
    return 0


def _cmd_gradcheck(args) -> int:
    results = run_suite()
    failed = False
    for name, err in results:
        status = "PASS" if err < TOLERANCE else "FAIL"
        failed |= status == "FAIL"
        print(f"{name:40s} max_rel_err={err:.3e}  {status}")
    print(f"{'SUITE':40s} {'FAIL' if failed else 'PASS'} "
          f"(tolerance {TOLERANCE:g})")
    return 1 if failed else 0


def _cmd_compare(args) -> int:
    cfg = parse_config(args.config) if args.config else ExperimentConfig()
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    _check_variants(variants)
    try:
        seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"--seeds: not an integer list: {args.seeds!r}") from None
    if not variants or not seeds:
        raise ConfigError("compare needs at least one variant and one seed")
    out = args.out or cfg.output_dir
    text = emit_config(cfg)
    jobs = [RunJob(config_text=text, variant=v, data_dir=args.data,
                   out_dir=os.path.join(out, f"{v}_seed{s}"), master_seed=s)
            for v in variants for s in seeds]
    results = run_jobs(jobs)

    lines = ["variant,mean_dice,std_dice,mean_expansion"]
    for v in variants:
        dices = [r["mean_dice"] for r in results if r["variant"] == v]
        exps = [r["mean_expansion"] for r in results if r["variant"] == v]
        std = float(np.std(dices, ddof=1)) if len(dices) > 1 else 0.0
        lines.append(f"{v},{float(np.mean(dices))!r},{std!r},{float(np.mean(exps))!r}")
        print(f"{v:15s} dice {np.mean(dices):.4f} +/- {std:.4f}  "
              f"expansion {np.mean(exps):.3f}")
    os.makedirs(out, exist_ok=True)
    write_atomic(os.path.join(out, "compare.csv"), "\n".join(lines) + "\n")
    return 0


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "sweep": _cmd_sweep,
    "gradcheck": _cmd_gradcheck,
    "compare": _cmd_compare,
}


def run(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 2
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (TrainingError, DataError, CheckpointError, OptimError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
