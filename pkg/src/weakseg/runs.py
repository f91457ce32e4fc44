"""Batch execution of training runs for sweeps and variant comparisons.

Each run is fully described by a picklable :class:`RunJob` and executes
independently (loads its own data, trains, writes its own output files), so
jobs fan out across worker processes with no shared state.  Results come
back in submission order regardless of completion order.
"""

from __future__ import annotations

import multiprocessing
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional

from .config import parse_config_text
from .data import build_reference_pool, load_dataset
from .metrics import evaluate_samples, mean_soft_size, size_bounds
from .train import ADVERSARIAL, checkpoint, metrics_to_csv, train_variant


@dataclass(frozen=True)
class RunJob:
    config_text: str  # canonical experiment config, self-contained
    variant: str
    data_dir: str
    out_dir: str
    master_seed: Optional[int] = None  # None: use the config's seed fields
    lambda_a: Optional[float] = None   # None: config / variant default


def write_atomic(path: str, text: str) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def execute_run(job: RunJob) -> dict:
    """Train one variant and write metrics.csv + model.ckpt into job.out_dir."""
    cfg = parse_config_text(job.config_text, origin="<job config>")
    train_set = load_dataset(os.path.join(job.data_dir, "train"))
    test_set = load_dataset(os.path.join(job.data_dir, "test"))
    tc = cfg.train_config(variant=job.variant, master_seed=job.master_seed,
                          lambda_a=job.lambda_a)

    pool = None
    if job.variant in ADVERSARIAL:
        mode = ADVERSARIAL[job.variant]
        if cfg.pool_mode not in ("auto", mode):
            raise ValueError(
                f"config pool mode {cfg.pool_mode!r} conflicts with "
                f"variant {job.variant!r} (needs {mode!r})")
        pool = build_reference_pool(train_set, mode, shuffle_seed=tc.seeds.pool)
    if job.variant == "sccl":
        tc.bounds = size_bounds([s.full_mask for s in train_set])

    model, records = train_variant(tc, train_set, test_set, pool=pool)

    os.makedirs(job.out_dir, exist_ok=True)
    write_atomic(os.path.join(job.out_dir, "metrics.csv"), metrics_to_csv(records))
    checkpoint(model, os.path.join(job.out_dir, "model.ckpt"))
    report = evaluate_samples(model, test_set)
    write_atomic(os.path.join(job.out_dir, "eval.csv"), report.to_csv())
    return {
        "variant": job.variant,
        "master_seed": job.master_seed,
        "lambda_a": tc.effective_lambda_a(),
        "mean_dice": report.mean_dice,
        "mean_expansion": report.mean_expansion,
        "mean_soft_size": mean_soft_size(model, test_set),
        "out_dir": job.out_dir,
    }


def _worker_init() -> None:
    # one BLAS thread per worker; the parallelism lives across processes
    from threadpoolctl import threadpool_limits
    threadpool_limits(limits=1)


def run_jobs(jobs: list[RunJob], workers: Optional[int] = None) -> list[dict]:
    if not jobs:
        return []
    if workers is None:
        workers = min(len(jobs), os.cpu_count() or 1)
    if workers <= 1 or len(jobs) == 1:
        return [execute_run(job) for job in jobs]
    ctx = multiprocessing.get_context("fork")
    with ProcessPoolExecutor(max_workers=workers, mp_context=ctx,
                             initializer=_worker_init) as pool:
        return list(pool.map(execute_run, jobs))
