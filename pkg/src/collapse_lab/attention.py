"""Discrete global-attention dynamics over token matrices.

Tokens live on the unit sphere; the query-key map is a pure alignment
kernel alpha * <x_i, x_j>, exponentiated (exact mode) or expanded to first
order around uniform attention (linearized mode). Layer stepping mixes each
token with its attention average under a residual weight and renormalizes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .errors import CollapseLabError, DegenerateInputError, RejectedInputError
from .linalg import row_normalize_sphere, row_softmax, singular_spectrum
from .merging import (
    MergeConfig,
    apply_merge,
    apply_unmerge,
    build_merge_map,
    effective_downsampling,
)
from .metrics import AttnMatrix
from .tokens import TokenMatrix

MODES = ("exact-softmax", "linearized")

TOP_SINGULAR_VALUES = 8


@dataclass(frozen=True)
class DynamicsConfig:
    """Knobs of the layer iteration.

    alpha is the query-key alignment strength; temperature rescales the
    attention logits (alpha absorbs any feature-dimension scaling, so the
    default temperature is 1). value_rotation optionally applies a fixed
    orthogonal matrix to the attention output, which must leave every
    collapse metric unchanged.
    """

    alpha: float = 4.0
    layers: int = 48
    residual_weight: float = 0.5
    temperature: float = 1.0
    mode: str = "exact-softmax"
    renormalize_each_layer: bool = True
    seed: int = 0
    value_rotation: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.alpha < 0:
            raise RejectedInputError(f"alpha must be nonnegative, got {self.alpha}")
        if self.layers < 1:
            raise RejectedInputError(f"layers must be >= 1, got {self.layers}")
        if not 0.0 <= self.residual_weight <= 1.0:
            raise RejectedInputError(
                f"residual_weight must be in [0, 1], got {self.residual_weight}"
            )
        if not self.temperature > 0:
            raise RejectedInputError(f"temperature must be positive, got {self.temperature}")
        if self.mode not in MODES:
            raise RejectedInputError(f"mode must be one of {MODES}, got {self.mode!r}")


@dataclass(frozen=True)
class LayerTrace:
    """Per-layer collapse measurements of the attention matrix in effect.

    downsampling records the realized token reduction for merged layers
    (1.0 when no merging was applied).
    """

    layer_index: int
    entropy_normalized: float
    effective_rank: float
    top_singular_values: np.ndarray
    mean_direction_norm: float
    attention_snapshot: Optional[AttnMatrix] = None
    downsampling: float = 1.0


def _require_unit(x: TokenMatrix, who: str):
    if not x.unit_norm:
        raise RejectedInputError(f"{who} requires unit-normalized tokens")


def attention_exact(x: TokenMatrix, cfg: DynamicsConfig) -> AttnMatrix:
    """Softmax attention over pairwise alignments alpha * <x_i, x_j>."""
    _require_unit(x, "attention_exact")
    scores = cfg.alpha * (x.tokens @ x.tokens.T)
    return AttnMatrix(matrix=row_softmax(scores, cfg.temperature), row_stochastic=True)


def attention_linearized(x: TokenMatrix, cfg: DynamicsConfig) -> AttnMatrix:
    """First-order expansion of the attention kernel around uniform:
    1/N + (alpha/N) * (<x_i,x_j> - mean_k <x_i,x_k>).

    Rows sum to 1 analytically because the correction is row-centered;
    entries may go slightly negative at large alpha, which is expected.
    """
    _require_unit(x, "attention_linearized")
    n = x.n
    coupling = cfg.alpha / cfg.temperature
    sims = x.tokens @ x.tokens.T
    a = 1.0 / n + (coupling / n) * (sims - sims.mean(axis=1, keepdims=True))
    return AttnMatrix(matrix=a, row_stochastic=False)


def attention_for_mode(x: TokenMatrix, cfg: DynamicsConfig) -> AttnMatrix:
    if cfg.mode == "linearized":
        return attention_linearized(x, cfg)
    return attention_exact(x, cfg)


def _mix_step(
    x: TokenMatrix, attn: AttnMatrix, cfg: DynamicsConfig, mixing: float
) -> TokenMatrix:
    """x' = (1 - mixing) * x + mixing * A x (optionally rotated), then
    renormalized to the sphere when configured."""
    if mixing == 0.0:
        return x
    averaged = attn.matrix @ x.tokens
    if cfg.value_rotation is not None:
        rot = np.asarray(cfg.value_rotation, dtype=np.float64)
        if rot.shape != (x.dim, x.dim):
            raise RejectedInputError(
                f"value_rotation must be {x.dim}x{x.dim}, got {rot.shape}"
            )
        averaged = averaged @ rot
    out = (1.0 - mixing) * x.tokens + mixing * averaged
    if cfg.renormalize_each_layer:
        try:
            out = row_normalize_sphere(out)
        except DegenerateInputError as e:
            raise DegenerateInputError(f"token vanished after averaging: {e}") from e
        return TokenMatrix(tokens=out, unit_norm=True)
    return TokenMatrix(tokens=out, unit_norm=False)


def step_layer(x: TokenMatrix, cfg: DynamicsConfig) -> TokenMatrix:
    """One layer of the dynamics on the full token set."""
    if cfg.residual_weight == 1.0:
        return x
    attn = attention_for_mode(x, cfg)
    return _mix_step(x, attn, cfg, 1.0 - cfg.residual_weight)


def _annotate(e: CollapseLabError, layer: int) -> CollapseLabError:
    out = type(e)(f"layer {layer}: {e}")
    out.__dict__.update(e.__dict__)
    return out


def run_dynamics(
    x0: TokenMatrix,
    cfg: DynamicsConfig,
    merge: Optional[MergeConfig] = None,
    snapshot_layers: Sequence[int] = (),
) -> list[LayerTrace]:
    """Run the layer iteration and record one LayerTrace per layer.

    When merging is scheduled for a layer, tokens are merged before the
    attention step and broadcast back afterwards; the trace metrics then
    describe the merged attention matrix. Merged layers also shrink the
    mixing weight to (1 - residual_weight) / d, with d the realized
    down-sampling factor: fewer distinct tokens mean proportionally lower
    mobility of the averaging flow, which is what delays collapse.
    """
    snapshots = {int(s) for s in snapshot_layers}
    if snapshots and not all(0 <= s <= cfg.layers for s in snapshots):
        raise RejectedInputError(
            f"snapshot layers must lie in [0, {cfg.layers}], got {sorted(snapshots)}"
        )
    x = x0
    traces: list[LayerTrace] = []
    for layer in range(cfg.layers):
        try:
            merged_now = (
                merge is not None
                and merge.schedule_every > 0
                and layer % merge.schedule_every == 0
            )
            if merged_now:
                merge_map = build_merge_map(x, merge)
                d_eff = effective_downsampling(merge_map)
                y = apply_merge(x, merge_map)
            else:
                merge_map = None
                d_eff = 1.0
                y = x
            attn = attention_for_mode(y, cfg)
            spec = singular_spectrum(attn.matrix)
            lam = spec.normalized[spec.normalized > 0.0]
            h_raw = float(-(lam * np.log(lam)).sum()) if lam.size else 0.0
            entropy_norm = h_raw / math.log(y.n)
            eff_rank = float(math.exp(h_raw))
            mixing = (1.0 - cfg.residual_weight) / d_eff
            y = _mix_step(y, attn, cfg, mixing)
            x = apply_unmerge(y, merge_map) if merge_map is not None else y
            traces.append(
                LayerTrace(
                    layer_index=layer,
                    entropy_normalized=entropy_norm,
                    effective_rank=eff_rank,
                    top_singular_values=spec.values[:TOP_SINGULAR_VALUES].copy(),
                    mean_direction_norm=float(np.linalg.norm(x.tokens.mean(axis=0))),
                    attention_snapshot=attn if layer in snapshots else None,
                    downsampling=d_eff,
                )
            )
        except CollapseLabError as e:
            raise _annotate(e, layer) from e
    return traces


def with_layers(cfg: DynamicsConfig, layers: int) -> DynamicsConfig:
    """Copy of cfg with a different layer count."""
    return replace(cfg, layers=layers)
