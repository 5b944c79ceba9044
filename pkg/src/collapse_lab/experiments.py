"""Experiment orchestration: canonical configurations, the five experiments
(collapse, merge-sweep, pde, scaling-fit, benchmark), and every file output.

All numeric artifacts are byte-reproducible from (config, seed); wall-clock
columns emitted by the benchmark experiment are the one exception, since
they measure the machine rather than the model.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .attention import DynamicsConfig, LayerTrace, run_dynamics
from .bench import measure_attention_cost, measure_merged_pipeline
from .errors import CollapseLabError, RejectedInputError
from .meanfield import init_particles, run_pde
from .merging import MergeConfig
from .metrics import collapse_time
from .render import emit_heatmap, emit_line_plot, write_csv
from .theory import fit_constants, fit_entropy_vs_downsampling, rank_bound
from .tokens import init_tokens

EXPERIMENTS = ("collapse", "merge-sweep", "pde", "scaling-fit", "benchmark")

THREADS_ENV_VAR = "COLLAPSE_LAB_THREADS"


@dataclass
class ExperimentConfig:
    """Complete run description; every field has a default so an empty
    config reproduces the core collapse run."""

    experiment: str = "collapse"
    output_dir: str = "out"
    seed: int = 0
    emit_plots: bool = True

    # token initialization
    n_tokens: int = 256
    dim: int = 32
    init: str = "uniform-sphere"
    clusters: int = 1
    spread: float = 0.1

    # dynamics
    alpha: float = 4.0
    layers: int = 48
    residual_weight: float = 0.5
    temperature: float = 1.0
    mode: str = "exact-softmax"
    renormalize_each_layer: bool = True
    snapshot_layers: tuple = ()

    # optional merging for the collapse experiment
    merge: Optional[dict] = None

    # merge-sweep
    sweep_m: tuple = (0.1, 0.3, 0.5, 0.7, 0.9)
    include_benchmark: bool = False

    # scaling-fit
    sweep_d: tuple = (1.0, 2.0, 4.0)
    collapse_threshold: float = 0.5

    # pde
    particles: int = 1024
    pde_dim: int = 3
    kappa: float = 1.0
    dt: float = 0.05
    t_end: float = 12.0
    record_every: int = 4
    pde_d_values: tuple = (1.0, 2.0)

    # benchmark
    bench_sizes: tuple = (256, 512, 1024, 2048)
    bench_fusion: tuple = (0.0, 0.3, 0.5, 0.7, 0.9)
    bench_repetitions: int = 5
    bench_layers: int = 4
    bench_pipeline_n: int = 2048

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise RejectedInputError(
                f"experiment must be one of {EXPERIMENTS}, got {self.experiment!r}"
            )
        for name in ("snapshot_layers", "sweep_m", "sweep_d", "pde_d_values",
                     "bench_sizes", "bench_fusion"):
            object.__setattr__(self, name, tuple(getattr(self, name)))

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(raw) - known
        if unknown:
            raise RejectedInputError(f"unknown config keys: {sorted(unknown)}")
        return cls(**raw)

    def canonical(self) -> dict:
        out = asdict(self)
        for key, val in out.items():
            if isinstance(val, tuple):
                out[key] = list(val)
        return out

    def dynamics_config(self, layers: Optional[int] = None) -> DynamicsConfig:
        return DynamicsConfig(
            alpha=self.alpha,
            layers=self.layers if layers is None else layers,
            residual_weight=self.residual_weight,
            temperature=self.temperature,
            mode=self.mode,
            renormalize_each_layer=self.renormalize_each_layer,
            seed=self.seed,
        )

    def merge_config(self, fusion_m: Optional[float] = None) -> Optional[MergeConfig]:
        raw = dict(self.merge or {})
        if fusion_m is not None:
            raw["fusion_m"] = fusion_m
        elif not raw:
            return None
        raw.setdefault("seed", self.seed)
        if "protected_indices" in raw:
            raw["protected_indices"] = frozenset(raw["protected_indices"])
        return MergeConfig(**raw)


@dataclass
class ReportBundle:
    """Paths of everything a run emitted, plus the manifest describing it."""

    output_dir: Path
    manifest: Path
    traces: list = field(default_factory=list)
    fits: list = field(default_factory=list)
    plots: list = field(default_factory=list)
    heatmaps: list = field(default_factory=list)


def config_hash(cfg: ExperimentConfig) -> str:
    blob = json.dumps(cfg.canonical(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


class _Emitter:
    """Tracks written artifacts so a failed run can clean up after itself."""

    def __init__(self, out_dir: Path, emit_plots: bool):
        self.out_dir = out_dir
        self.emit_plots = emit_plots
        self.artifacts: list[tuple[Path, str]] = []

    def csv(self, name: str, header, rows) -> Path:
        p = write_csv(self.out_dir / name, header, rows)
        self.artifacts.append((p, "csv"))
        return p

    def json(self, name: str, payload: dict) -> Path:
        p = self.out_dir / name
        p.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")
        self.artifacts.append((p, "json"))
        return p

    def plot(self, name: str, series, **kw) -> Optional[Path]:
        if not self.emit_plots:
            return None
        p = emit_line_plot(series, self.out_dir / name, **kw)
        self.artifacts.append((p, "svg"))
        return p

    def heatmap(self, name: str, matrix) -> Path:
        p = emit_heatmap(matrix, self.out_dir / name)
        self.artifacts.append((p, "pgm"))
        return p

    def cleanup(self):
        for p, _ in self.artifacts:
            p.unlink(missing_ok=True)


def _trace_rows(traces: list[LayerTrace]):
    return [
        (
            t.layer_index,
            t.entropy_normalized,
            t.effective_rank,
            t.mean_direction_norm,
            t.downsampling,
        )
        for t in traces
    ]


TRACE_HEADER = (
    "layer",
    "entropy_normalized",
    "effective_rank",
    "mean_direction_norm",
    "downsampling",
)


def _run_collapse(cfg: ExperimentConfig, em: _Emitter, bundle: ReportBundle):
    x0 = init_tokens(
        cfg.n_tokens, cfg.dim, cfg.init, seed=cfg.seed,
        clusters=cfg.clusters, spread=cfg.spread,
    )
    snaps = cfg.snapshot_layers or (0, cfg.layers // 4, cfg.layers // 2, cfg.layers - 1)
    traces = run_dynamics(
        x0, cfg.dynamics_config(), merge=cfg.merge_config(), snapshot_layers=snaps
    )
    bundle.traces.append(em.csv("collapse_trace.csv", TRACE_HEADER, _trace_rows(traces)))
    ct = collapse_time(traces, cfg.collapse_threshold, "entropy-below")
    bundle.fits.append(
        em.json(
            "collapse_time.json",
            {
                "tau": ct.tau,
                "threshold": ct.threshold,
                "definition": ct.definition,
                "censored": ct.censored,
            },
        )
    )
    layers = [t.layer_index for t in traces]
    p = em.plot(
        "entropy_vs_layer.svg",
        [("normalized SV entropy", layers, [t.entropy_normalized for t in traces])],
        title="Attention entropy across layers",
        x_label="layer", y_label="normalized entropy",
    )
    if p:
        bundle.plots.append(p)
    p = em.plot(
        "rank_vs_layer.svg",
        [("effective rank", layers, [t.effective_rank for t in traces])],
        title="Effective rank across layers",
        x_label="layer", y_label="effective rank",
    )
    if p:
        bundle.plots.append(p)
    for t in traces:
        if t.attention_snapshot is not None:
            bundle.heatmaps.append(
                em.heatmap(f"attention_layer{t.layer_index:03d}.pgm", t.attention_snapshot)
            )


def _run_merge_sweep(cfg: ExperimentConfig, em: _Emitter, bundle: ReportBundle):
    x0 = init_tokens(
        cfg.n_tokens, cfg.dim, cfg.init, seed=cfg.seed,
        clusters=cfg.clusters, spread=cfg.spread,
    )
    dyn = cfg.dynamics_config()
    per_m = []
    rank_family = {}
    for m in cfg.sweep_m:
        traces = run_dynamics(x0, dyn, merge=cfg.merge_config(fusion_m=m))
        d_eff = traces[0].downsampling
        layers = np.array([t.layer_index for t in traces], dtype=float)
        ranks = np.array([t.effective_rank for t in traces])
        ct = collapse_time(traces, cfg.collapse_threshold, "entropy-below")
        per_m.append(
            {
                "m": m,
                "d": d_eff,
                "entropy": traces[-1].entropy_normalized,
                "rank": traces[-1].effective_rank,
                "tau": ct.tau,
                "censored": ct.censored,
            }
        )
        rank_family[d_eff] = (layers, ranks)
    h0, beta = fit_entropy_vs_downsampling(
        [row["d"] for row in per_m], [row["entropy"] for row in per_m]
    )
    rank_fit = fit_constants(rank_family, "rank-exp", cfg.n_tokens)
    final_layer = cfg.layers - 1
    rows = []
    for row in per_m:
        rows.append(
            (
                row["m"],
                row["d"],
                row["entropy"],
                h0 - beta / row["d"],
                row["rank"],
                rank_bound(rank_fit.parameters, final_layer, cfg.n_tokens, row["d"]),
            )
        )
    bundle.traces.append(
        em.csv(
            "merge_sweep_table1.csv",
            ("m", "d_effective", "entropy_exp", "entropy_theory", "rank_exp", "rank_theory"),
            rows,
        )
    )
    bundle.traces.append(
        em.csv(
            "merge_sweep_tau.csv",
            ("m", "d_effective", "tau", "censored"),
            [(r["m"], r["d"], r["tau"], str(int(r["censored"]))) for r in per_m],
        )
    )
    bundle.fits.append(
        em.json(
            "merge_sweep_fit.json",
            {
                "entropy_interpolation": {"H0": h0, "beta": beta},
                "rank_law": {
                    "r": rank_fit.parameters.r,
                    "C": rank_fit.parameters.C,
                    "alpha_fit": rank_fit.parameters.alpha_fit,
                    "r_squared": rank_fit.r_squared,
                },
            },
        )
    )
    ms = [r["m"] for r in per_m]
    p = em.plot(
        "entropy_vs_m.svg",
        [
            ("measured", ms, [r["entropy"] for r in per_m]),
            ("theory", ms, [h0 - beta / r["d"] for r in per_m]),
        ],
        title="Final-layer entropy vs fusion strength",
        x_label="fusion m", y_label="normalized entropy",
    )
    if p:
        bundle.plots.append(p)
    p = em.plot(
        "rank_vs_m.svg",
        [
            ("measured", ms, [r["rank"] for r in per_m]),
            (
                "theory",
                ms,
                [
                    rank_bound(rank_fit.parameters, final_layer, cfg.n_tokens, r["d"])
                    for r in per_m
                ],
            ),
        ],
        title="Final-layer effective rank vs fusion strength",
        x_label="fusion m", y_label="effective rank",
    )
    if p:
        bundle.plots.append(p)
    if cfg.include_benchmark:
        bench_rows = []
        for m in cfg.sweep_m:
            sample = measure_merged_pipeline(
                cfg.bench_pipeline_n,
                cfg.dim,
                fusion_m=m,
                layers=cfg.bench_layers,
                repetitions=cfg.bench_repetitions,
                seed=cfg.seed,
            )
            bench_rows.append((m, sample.d, sample.relative_runtime, sample.speedup))
        bundle.traces.append(
            em.csv(
                "merge_sweep_table2.csv",
                ("m", "d_effective", "relative_runtime", "speedup"),
                bench_rows,
            )
        )


def _run_pde(cfg: ExperimentConfig, em: _Emitter, bundle: ReportBundle):
    rows = []
    series_mean, series_entropy = [], []
    for d in cfg.pde_d_values:
        p0 = init_particles(cfg.particles, cfg.pde_dim, cfg.kappa, cfg.dt, seed=cfg.seed)
        trace = run_pde(p0, cfg.t_end, downsampling_d=d, record_every=cfg.record_every)
        for t, mn, var, ent in zip(
            trace.times, trace.mean_norms, trace.variances, trace.entropies
        ):
            rows.append((d, t, mn, var, "-inf" if math.isinf(ent) else ent))
        series_mean.append((f"d={d:g}", trace.times.tolist(), trace.mean_norms.tolist()))
        finite = np.isfinite(trace.entropies)
        if finite.sum() >= 2:
            series_entropy.append(
                (f"d={d:g}", trace.times[finite].tolist(), trace.entropies[finite].tolist())
            )
    bundle.traces.append(
        em.csv("pde_trace.csv", ("d", "time", "mean_norm", "variance", "entropy"), rows)
    )
    p = em.plot(
        "pde_mean_norm.svg", series_mean,
        title="Mean-direction norm along the particle flow",
        x_label="time", y_label="mean norm",
    )
    if p:
        bundle.plots.append(p)
    if series_entropy:
        p = em.plot(
            "pde_entropy.svg", series_entropy,
            title="Differential entropy along the particle flow",
            x_label="time", y_label="entropy (nats)",
        )
        if p:
            bundle.plots.append(p)


def _run_scaling_fit(cfg: ExperimentConfig, em: _Emitter, bundle: ReportBundle):
    """Down-sampling sweep with redundancy matched to the fusion level.

    The run at factor d uses n_tokens * d tokens drawn as d jittered copies
    of one shared set of n_tokens directions (merging presumes redundant
    tokens; d is the redundancy factor). Each run gets proportionally more
    layers so every trace covers the same rescaled horizon layer/d.
    """
    rows = []
    tau_rows = []
    rank_family, entropy_family = {}, {}
    rescaled_rank, rescaled_entropy = [], []
    for d in cfg.sweep_d:
        if d < 1:
            raise RejectedInputError(f"sweep_d entries must be >= 1, got {d}")
        x0 = init_tokens(
            round(cfg.n_tokens * d), cfg.dim, "gaussian-clusters", seed=cfg.seed,
            clusters=cfg.n_tokens, spread=cfg.spread,
        )
        fusion = 0.0 if d == 1.0 else 1.0 - 1.0 / d
        layers_d = math.ceil(cfg.layers * d)
        traces = run_dynamics(
            x0,
            cfg.dynamics_config(layers=layers_d),
            merge=cfg.merge_config(fusion_m=fusion) if fusion > 0 else None,
        )
        d_eff = traces[0].downsampling if fusion > 0 else 1.0
        layers = np.array([t.layer_index for t in traces], dtype=float)
        entropy = np.array([t.entropy_normalized for t in traces])
        ranks = np.array([t.effective_rank for t in traces])
        for t in traces:
            rows.append((d_eff, t.layer_index, t.entropy_normalized, t.effective_rank))
        ct = collapse_time(traces, cfg.collapse_threshold, "entropy-below")
        tau_rows.append((d_eff, ct.tau, str(int(ct.censored))))
        rank_family[d_eff] = (layers, ranks)
        entropy_family[d_eff] = (layers, entropy)
        rescaled_rank.append((f"d={d_eff:g}", (layers / d_eff).tolist(), ranks.tolist()))
        rescaled_entropy.append(
            (f"d={d_eff:g}", (layers / d_eff).tolist(), entropy.tolist())
        )
    bundle.traces.append(
        em.csv(
            "scaling_traces.csv",
            ("d_effective", "layer", "entropy_normalized", "effective_rank"),
            rows,
        )
    )
    bundle.traces.append(
        em.csv("scaling_tau.csv", ("d_effective", "tau", "censored"), tau_rows)
    )
    rank_fit = fit_constants(rank_family, "rank-exp", cfg.n_tokens)
    entropy_fit = fit_constants(entropy_family, "entropy-linear", cfg.n_tokens)
    bundle.fits.append(
        em.json(
            "scaling_fit.json",
            {
                "rank_law": {
                    "r": rank_fit.parameters.r,
                    "C": rank_fit.parameters.C,
                    "alpha_fit": rank_fit.parameters.alpha_fit,
                    "r_squared": rank_fit.r_squared,
                    "residual_mean_by_d": {
                        f"{d:g}": v for d, v in rank_fit.residual_mean_by_d.items()
                    },
                },
                "entropy_law": {
                    "H0": entropy_fit.parameters.H0,
                    "k": entropy_fit.parameters.k,
                    "r_squared": entropy_fit.r_squared,
                    "residual_mean_by_d": {
                        f"{d:g}": v for d, v in entropy_fit.residual_mean_by_d.items()
                    },
                },
            },
        )
    )
    p = em.plot(
        "rank_vs_rescaled_layer.svg", rescaled_rank,
        title="Effective rank vs layer/d",
        x_label="layer / d", y_label="effective rank",
    )
    if p:
        bundle.plots.append(p)
    p = em.plot(
        "entropy_vs_rescaled_layer.svg", rescaled_entropy,
        title="Entropy vs layer/d",
        x_label="layer / d", y_label="normalized entropy",
    )
    if p:
        bundle.plots.append(p)


def _run_benchmark(cfg: ExperimentConfig, em: _Emitter, bundle: ReportBundle):
    rows = []
    times = []
    for n in cfg.bench_sizes:
        sample = measure_attention_cost(
            n, cfg.dim, repetitions=cfg.bench_repetitions, seed=cfg.seed
        )
        rows.append((sample.n_tokens, 0.0, 1.0, sample.wall_time, 1.0, 1.0))
        times.append((n, sample.wall_time))
    for m in cfg.bench_fusion:
        sample = measure_merged_pipeline(
            cfg.bench_pipeline_n, cfg.dim, fusion_m=m,
            layers=cfg.bench_layers, repetitions=cfg.bench_repetitions,
            seed=cfg.seed,
        )
        rows.append(
            (
                sample.n_tokens,
                m,
                sample.d,
                sample.wall_time,
                sample.relative_runtime,
                sample.speedup,
            )
        )
    bundle.traces.append(
        em.csv(
            "benchmark.csv",
            ("n_tokens", "fusion_m", "d_effective", "wall_time_s",
             "relative_runtime", "speedup"),
            rows,
        )
    )
    p = em.plot(
        "time_vs_n.svg",
        [("attention step", [float(n) for n, _ in times], [t for _, t in times])],
        title="Attention step wall time vs token count",
        x_label="tokens", y_label="seconds",
    )
    if p:
        bundle.plots.append(p)


_RUNNERS = {
    "collapse": _run_collapse,
    "merge-sweep": _run_merge_sweep,
    "pde": _run_pde,
    "scaling-fit": _run_scaling_fit,
    "benchmark": _run_benchmark,
}


def run_experiment(cfg: ExperimentConfig) -> ReportBundle:
    """Execute the configured experiment and write its artifacts.

    Any module error aborts the run, removes partial outputs, and re-raises
    with the failing stage named.
    """
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    em = _Emitter(out_dir, cfg.emit_plots)
    bundle = ReportBundle(output_dir=out_dir, manifest=out_dir / "manifest.json")
    try:
        _RUNNERS[cfg.experiment](cfg, em, bundle)
    except CollapseLabError as e:
        em.cleanup()
        raise type(e)(f"experiment {cfg.experiment!r} failed: {e}") from e
    except OSError:
        em.cleanup()
        raise
    manifest = {
        "experiment": cfg.experiment,
        "config": cfg.canonical(),
        "config_hash": config_hash(cfg),
        "artifacts": [
            {"path": p.name, "kind": kind} for p, kind in em.artifacts
        ],
        "threads_env": {THREADS_ENV_VAR: os.environ.get(THREADS_ENV_VAR)},
    }
    bundle.manifest.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    return bundle
