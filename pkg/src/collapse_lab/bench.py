"""Wall-clock benchmarks for the attention step and the merged pipeline.

Timings report the median over repetitions after warmup and default to
single-threaded kernels (via threadpoolctl when available) so the measured
scaling reflects the algorithm rather than the scheduler. Timing never
changes numerical results; the timed pipeline is the same pure function
callers can run untimed.
"""

from __future__ import annotations

import statistics
import time
from contextlib import nullcontext
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .attention import DynamicsConfig, attention_exact, _mix_step
from .errors import RejectedInputError
from .merging import MergeConfig, apply_merge, apply_unmerge, build_merge_map, effective_downsampling
from .tokens import TokenMatrix, init_tokens

try:
    from threadpoolctl import threadpool_limits
except ImportError:  # pragma: no cover
    threadpool_limits = None


def _thread_guard(single_thread: bool):
    if single_thread and threadpool_limits is not None:
        return threadpool_limits(limits=1)
    return nullcontext()


@dataclass(frozen=True)
class RuntimeSample:
    """Median wall time of a kernel at one configuration point."""

    n_tokens: int
    d: float
    wall_time: float
    repetitions: int
    warmup: int
    relative_runtime: Optional[float] = None
    speedup: Optional[float] = None


def _median_time(fn, repetitions: int, warmup: int) -> float:
    for _ in range(warmup):
        fn()
    samples = []
    for _ in range(repetitions):
        t0 = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t0)
    return statistics.median(samples)


def attention_step_once(x: TokenMatrix, cfg: DynamicsConfig) -> TokenMatrix:
    """One full attention step: similarity matrix, row softmax, aggregation."""
    attn = attention_exact(x, cfg)
    return _mix_step(x, attn, cfg, 1.0 - cfg.residual_weight)


def run_merged_pipeline(
    x: TokenMatrix,
    cfg: DynamicsConfig,
    merge: Optional[MergeConfig],
    layers: int,
) -> tuple[TokenMatrix, float]:
    """`layers` iterations of merge -> attention -> unmerge (no metrics).

    Returns the final tokens and the realized down-sampling factor. Passing
    merge=None runs the plain attention pipeline used as the baseline.
    """
    d_eff = 1.0
    for _ in range(layers):
        if merge is not None:
            merge_map = build_merge_map(x, merge)
            d_eff = effective_downsampling(merge_map)
            y = apply_merge(x, merge_map)
            y = _mix_step(y, attention_exact(y, cfg), cfg, (1.0 - cfg.residual_weight) / d_eff)
            x = apply_unmerge(y, merge_map)
        else:
            x = attention_step_once(x, cfg)
    return x, d_eff


def measure_attention_cost(
    n: int,
    dim: int = 32,
    repetitions: int = 5,
    seed: int = 0,
    warmup: int = 1,
    single_thread: bool = True,
) -> RuntimeSample:
    """Time one full attention step on n random unit tokens."""
    if n < 16:
        raise RejectedInputError(f"n must be >= 16, got {n}")
    if repetitions < 3:
        raise RejectedInputError(f"repetitions must be >= 3, got {repetitions}")
    try:
        x = init_tokens(n, dim, seed=seed)
    except MemoryError as e:  # pragma: no cover
        raise RejectedInputError(f"cannot allocate {n} x {dim} token matrix: {e}") from e
    cfg = DynamicsConfig(alpha=1.0, layers=1, residual_weight=0.5)
    with _thread_guard(single_thread):
        wall = _median_time(lambda: attention_step_once(x, cfg), repetitions, warmup)
    return RuntimeSample(
        n_tokens=n, d=1.0, wall_time=wall, repetitions=repetitions, warmup=warmup
    )


def measure_merged_pipeline(
    n: int,
    dim: int = 32,
    fusion_m: float = 0.5,
    layers: int = 4,
    repetitions: int = 5,
    seed: int = 0,
    warmup: int = 1,
    single_thread: bool = True,
) -> RuntimeSample:
    """Time `layers` merged iterations against the unmerged baseline.

    relative_runtime is merged/baseline; speedup its inverse.
    """
    if n < 16:
        raise RejectedInputError(f"n must be >= 16, got {n}")
    if repetitions < 3:
        raise RejectedInputError(f"repetitions must be >= 3, got {repetitions}")
    if not 0.0 <= fusion_m < 1.0:
        raise RejectedInputError(f"fusion_m must be in [0, 1), got {fusion_m}")
    if layers < 1:
        raise RejectedInputError(f"layers must be >= 1, got {layers}")
    x = init_tokens(n, dim, seed=seed)
    cfg = DynamicsConfig(alpha=1.0, layers=layers, residual_weight=0.5)
    merge = MergeConfig(fusion_m=fusion_m)
    _, d_eff = run_merged_pipeline(x, cfg, merge, 1)
    with _thread_guard(single_thread):
        merged = _median_time(
            lambda: run_merged_pipeline(x, cfg, merge, layers), repetitions, warmup
        )
        baseline = _median_time(
            lambda: run_merged_pipeline(x, cfg, None, layers), repetitions, warmup
        )
    return RuntimeSample(
        n_tokens=n,
        d=d_eff,
        wall_time=merged,
        repetitions=repetitions,
        warmup=warmup,
        relative_runtime=merged / baseline,
        speedup=baseline / merged,
    )
