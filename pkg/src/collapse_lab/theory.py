"""Closed-form collapse laws and least-squares calibration of their
constants against measured traces.

Two laws are fit: an exponential rank envelope
    rank(layer) ~ r + C * exp(-alpha_fit * layer / (d * N))
and a linear entropy decay
    H(layer) ~ H0 - k * layer / (N * d).
Both are fit jointly across down-sampling factors d on the d-rescaled
abscissa layer/d, so a single parameter set must explain every sweep.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import FitFailureError, RejectedInputError

TRANSIENT_FRACTION = 0.10  # leading fraction of layers excluded from fits
RANK_WINDOW_FRACTION = 0.05  # keep points with value - r > 5% of C


@dataclass(frozen=True)
class TheoryModel:
    """Fitted constants powering all predicted curves."""

    r: float = 1.0
    C: float = 1.0
    alpha_fit: float = 1.0
    H0: float = 1.0
    k: float = 1.0

    def __post_init__(self):
        if self.r < 0:
            raise RejectedInputError(f"r must be nonnegative, got {self.r}")
        for name in ("C", "alpha_fit", "k"):
            if getattr(self, name) <= 0:
                raise RejectedInputError(f"{name} must be positive, got {getattr(self, name)}")


@dataclass(frozen=True)
class FitReport:
    parameters: TheoryModel
    r_squared: float
    residuals: np.ndarray
    residual_mean_by_d: dict
    law: str


def rank_bound(model: TheoryModel, layer: float, n_tokens: int, d: float = 1.0) -> float:
    """Exponential rank envelope; down-sampling stretches the decay by d."""
    if layer < 0 or n_tokens < 1 or d < 1:
        raise RejectedInputError(
            f"need layer >= 0, n_tokens >= 1, d >= 1; got {layer}, {n_tokens}, {d}"
        )
    return model.r + model.C * math.exp(-model.alpha_fit * layer / (d * n_tokens))


def entropy_law(model: TheoryModel, layers: float, n_tokens: int, d: float = 1.0) -> float:
    """Linear entropy decay H0 - k * L / (N * d), clamped below at 0."""
    if layers < 0 or n_tokens < 1 or d < 1:
        raise RejectedInputError(
            f"need layers >= 0, n_tokens >= 1, d >= 1; got {layers}, {n_tokens}, {d}"
        )
    return max(0.0, model.H0 - model.k * layers / (n_tokens * d))


def tau_prediction(tau_base: float, d: float) -> float:
    """Collapse time scales linearly with the down-sampling factor."""
    if not tau_base > 0:
        raise RejectedInputError(f"tau_base must be positive, got {tau_base}")
    if d < 1:
        raise RejectedInputError(f"d must be >= 1, got {d}")
    return d * tau_base


def complexity_model(tokens_per_view: int, views: int, d: float = 1.0) -> float:
    """Predicted pairwise-operation count of dense global attention."""
    if tokens_per_view < 1 or views < 1 or d < 1:
        raise RejectedInputError("tokens_per_view, views must be >= 1 and d >= 1")
    return (tokens_per_view * views / d) ** 2


def fit_entropy_vs_downsampling(
    d_values: Sequence[float], entropies: Sequence[float]
) -> tuple[float, float]:
    """Calibrate H = H0 - beta / d by ordinary least squares on 1/d.

    Returns (H0, beta). Used to interpolate final-layer entropies across
    fusion strengths.
    """
    d = np.asarray(d_values, dtype=np.float64)
    h = np.asarray(entropies, dtype=np.float64)
    if d.size != h.size or d.size < 2:
        raise RejectedInputError("need at least two (d, entropy) pairs")
    if np.any(d < 1):
        raise RejectedInputError("all d values must be >= 1")
    x = 1.0 / d
    xc = x - x.mean()
    denom = float(xc @ xc)
    if denom <= 0:
        raise FitFailureError("degenerate d values", {"d": d.tolist()})
    slope = float(xc @ (h - h.mean())) / denom
    beta = -slope
    h0 = float(h.mean() + beta * x.mean())
    return h0, beta


def _windowed(
    trace_family: Mapping[float, tuple[Sequence[float], Sequence[float]]],
) -> dict[float, tuple[np.ndarray, np.ndarray]]:
    if len(trace_family) < 2:
        raise RejectedInputError("need at least 2 distinct d values")
    out = {}
    for d, (layers, values) in trace_family.items():
        if d < 1:
            raise RejectedInputError(f"d must be >= 1, got {d}")
        ell = np.asarray(layers, dtype=np.float64)
        val = np.asarray(values, dtype=np.float64)
        if ell.size != val.size or ell.size < 8:
            raise RejectedInputError(f"series for d={d} needs >= 8 layers")
        keep = ell >= TRANSIENT_FRACTION * ell.max()
        out[float(d)] = (ell[keep], val[keep])
    return out


def _linear_fit(u: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    # least squares y = a + b * u
    uc = u - u.mean()
    denom = float(uc @ uc)
    if denom <= 0:
        raise FitFailureError("degenerate abscissa in linear fit", {})
    b = float(uc @ (y - y.mean())) / denom
    a = float(y.mean() - b * u.mean())
    return a, b


def _rank_sse(
    family: dict[float, tuple[np.ndarray, np.ndarray]],
    n_tokens: int,
    r: float,
) -> tuple[float, float, float]:
    """Fit (C, alpha_fit) for a fixed floor r; returns (sse, C, alpha_fit)."""
    us, zs = [], []
    c_guess = max(v.max() for _, v in family.values()) - r
    floor = max(RANK_WINDOW_FRACTION * c_guess, 1e-12)
    for d, (ell, val) in family.items():
        excess = val - r
        keep = excess > floor
        if keep.sum() >= 2:
            us.append(ell[keep] / (d * n_tokens))
            zs.append(np.log(excess[keep]))
    if not us:
        return math.inf, 1.0, 1.0
    u = np.concatenate(us)
    z = np.concatenate(zs)
    if u.size < 3 or np.ptp(u) <= 0:
        return math.inf, 1.0, 1.0
    logc, slope = _linear_fit(u, z)
    c_fit = math.exp(logc)
    alpha_fit = -slope
    if alpha_fit <= 0 or not math.isfinite(c_fit):
        return math.inf, c_fit, alpha_fit
    sse = 0.0
    for d, (ell, val) in family.items():
        pred = r + c_fit * np.exp(-alpha_fit * ell / (d * n_tokens))
        sse += float(np.sum((val - pred) ** 2))
    return sse, c_fit, alpha_fit


def fit_constants(
    trace_family: Mapping[float, tuple[Sequence[float], Sequence[float]]],
    law: str,
    n_tokens: int,
) -> FitReport:
    """Jointly fit one law across a family of metric-vs-layer series keyed
    by down-sampling factor d.

    law "rank-exp" fits r + C exp(-alpha_fit * layer / (d N)) with the floor
    r found by a deterministic 1-D search and (C, alpha_fit) by linear least
    squares in log space; law "entropy-linear" fits H0 - k * layer / (N d) by
    ordinary least squares. Raises FitFailureError on constant or degenerate
    series.
    """
    if n_tokens < 1:
        raise RejectedInputError(f"n_tokens must be >= 1, got {n_tokens}")
    family = _windowed(trace_family)
    all_vals = np.concatenate([v for _, v in family.values()])
    sst = float(np.sum((all_vals - all_vals.mean()) ** 2))
    if sst <= 1e-18:
        raise FitFailureError(
            "constant series cannot identify the law constants",
            {"value": float(all_vals.mean()), "n_points": int(all_vals.size)},
        )

    if law == "entropy-linear":
        u = np.concatenate(
            [ell / (d * n_tokens) for d, (ell, _) in family.items()]
        )
        y = np.concatenate([val for _, val in family.values()])
        h0, slope = _linear_fit(u, y)
        k = -slope
        if k <= 0:
            raise FitFailureError(
                "entropy series is not decreasing; decay constant k would be "
                f"{k:.3g}",
                {"slope": slope},
            )
        model = TheoryModel(r=1.0, C=1.0, alpha_fit=1.0, H0=h0, k=k)
        predict = lambda d, ell: h0 - k * ell / (d * n_tokens)
    elif law == "rank-exp":
        min_val = float(all_vals.min())
        # deterministic coarse-to-fine search for the floor r
        lo, hi = 0.0, max(min_val - 1e-9, 0.0)
        best = (math.inf, 0.0, 1.0, 1.0)
        grid = np.linspace(lo, hi, 129)
        for r in grid:
            sse, c_fit, a_fit = _rank_sse(family, n_tokens, float(r))
            if sse < best[0]:
                best = (sse, float(r), c_fit, a_fit)
        span = (hi - lo) / 128 if hi > lo else 0.0
        if span > 0:
            fine_lo = max(lo, best[1] - span)
            fine_hi = min(hi, best[1] + span)
            for _ in range(60):
                mids = np.linspace(fine_lo, fine_hi, 5)
                vals = [_rank_sse(family, n_tokens, float(r)) for r in mids]
                idx = int(np.argmin([v[0] for v in vals]))
                if vals[idx][0] < best[0]:
                    best = (vals[idx][0], float(mids[idx]), vals[idx][1], vals[idx][2])
                width = (fine_hi - fine_lo) / 4
                fine_lo = max(lo, best[1] - width)
                fine_hi = min(hi, best[1] + width)
                if fine_hi - fine_lo < 1e-12:
                    break
        sse, r_best, c_best, a_best = best
        if not math.isfinite(sse):
            raise FitFailureError(
                "rank-law fit window is empty; series may already sit at the floor",
                {"min_value": min_val},
            )
        model = TheoryModel(r=r_best, C=c_best, alpha_fit=a_best, H0=1.0, k=1.0)
        predict = lambda d, ell: r_best + c_best * np.exp(
            -a_best * ell / (d * n_tokens)
        )
    else:
        raise RejectedInputError(f"unknown law {law!r}")

    residuals = []
    by_d = {}
    sse = 0.0
    for d, (ell, val) in family.items():
        res = val - predict(d, ell)
        residuals.append(res)
        by_d[d] = float(res.mean())
        sse += float(res @ res)
    flat = np.concatenate(residuals)
    return FitReport(
        parameters=model,
        r_squared=1.0 - sse / sst,
        residuals=flat,
        residual_mean_by_d=by_d,
        law=law,
    )
