"""Collapse metrics: spectral entropy, effective rank, collapse times, and a
k-nearest-neighbor differential entropy estimate for particle clouds."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DegenerateInputError, RejectedInputError
from .linalg import as_matrix, singular_spectrum

EULER_GAMMA = 0.5772156649015329


@dataclass(frozen=True)
class AttnMatrix:
    """Square attention matrix; row_stochastic marks softmax-normalized rows."""

    matrix: np.ndarray
    row_stochastic: bool = True

    @property
    def n(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True)
class CollapseTime:
    """First (interpolated) layer at which a collapse metric crossed the
    threshold from above; censored=True if it never did."""

    tau: float
    threshold: float
    definition: str
    censored: bool = False


def _square_matrix(a) -> np.ndarray:
    m = a.matrix if isinstance(a, AttnMatrix) else as_matrix(a)
    if m.shape[0] != m.shape[1]:
        raise RejectedInputError(f"expected a square matrix, got {m.shape}")
    return m


def sv_entropy_normalized(a) -> float:
    """Shannon entropy of the normalized singular-value spectrum, divided by
    log N so the result lies in [0, 1]. Zero singular values contribute 0."""
    m = _square_matrix(a)
    if m.shape[0] < 2:
        raise RejectedInputError("entropy normalization needs N >= 2")
    spec = singular_spectrum(m)
    lam = spec.normalized
    if lam[0] == 0.0:
        raise DegenerateInputError("all-zero matrix has no singular spectrum")
    pos = lam[lam > 0.0]
    h = float(-(pos * np.log(pos)).sum())
    return h / math.log(m.shape[0])


def effective_rank(a) -> float:
    """exp of the spectrum entropy: a smooth rank surrogate in [1, N]."""
    m = _square_matrix(a)
    h_norm = sv_entropy_normalized(m)
    return float(math.exp(h_norm * math.log(m.shape[0])))


def row_shannon_entropy(a) -> float:
    """Mean Shannon entropy of the rows of a row-stochastic matrix, divided
    by log N. Diagnostic only; the collapse metrics above are spectral."""
    m = _square_matrix(a)
    if np.any(m < -1e-12):
        raise RejectedInputError("row entropy needs nonnegative entries")
    p = np.clip(m, 0.0, None)
    sums = p.sum(axis=1, keepdims=True)
    if np.any(sums <= 0):
        raise DegenerateInputError("zero row in row-entropy input")
    p = p / sums
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0.0, p * np.log(p), 0.0)
    return float(-terms.sum(axis=1).mean() / math.log(m.shape[0]))


_TRACE_FIELDS = {
    "entropy-below": "entropy_normalized",
    "effective-rank-below": "effective_rank",
}


def collapse_time(trace: Sequence, threshold: float, definition: str = "entropy-below") -> CollapseTime:
    """Scan a per-layer trace for the first downward crossing of `threshold`.

    `trace` is a sequence of per-layer records exposing layer_index plus the
    metric named by `definition` (plain floats are also accepted and indexed
    0..L-1). The crossing layer is linearly interpolated; a trace that never
    drops to the threshold is returned censored at the last layer.
    """
    if definition not in _TRACE_FIELDS:
        raise RejectedInputError(f"unknown collapse definition {definition!r}")
    if len(trace) == 0:
        raise RejectedInputError("empty trace")
    field = _TRACE_FIELDS[definition]
    if hasattr(trace[0], field):
        xs = [float(t.layer_index) for t in trace]
        vs = [float(getattr(t, field)) for t in trace]
    else:
        xs = [float(i) for i in range(len(trace))]
        vs = [float(v) for v in trace]
    if vs[0] <= threshold:
        return CollapseTime(tau=xs[0], threshold=threshold, definition=definition)
    for i in range(1, len(vs)):
        if vs[i] <= threshold:
            frac = (vs[i - 1] - threshold) / (vs[i - 1] - vs[i])
            tau = xs[i - 1] + frac * (xs[i] - xs[i - 1])
            return CollapseTime(tau=tau, threshold=threshold, definition=definition)
    return CollapseTime(tau=xs[-1], threshold=threshold, definition=definition, censored=True)


def _digamma_int(n: int) -> float:
    # psi(n) = -gamma + H_{n-1} for integer n >= 1
    if n < 1:
        raise RejectedInputError(f"digamma argument must be >= 1, got {n}")
    if n == 1:
        return -EULER_GAMMA
    return -EULER_GAMMA + float(np.sum(1.0 / np.arange(1, n, dtype=np.float64)))


def _unit_ball_log_volume(d: int) -> float:
    # log volume of the unit ball in R^d
    return 0.5 * d * math.log(math.pi) - math.lgamma(0.5 * d + 1.0)


def particle_entropy_knn(p, k: int = 4) -> float:
    """Kozachenko-Leonenko differential entropy of unit vectors, in nats.

    Uses geodesic (great-circle) distances, so the estimate targets the
    density on the sphere's intrinsic (dim-1)-dimensional manifold. Returns
    -inf when duplicate points make the k-th neighbor distance zero (the
    Dirac limit).
    """
    positions = np.asarray(getattr(p, "positions", p), dtype=np.float64)
    if positions.ndim != 2:
        raise RejectedInputError("positions must be an M x dim array")
    m, dim = positions.shape
    if k < 1:
        raise RejectedInputError(f"k must be >= 1, got {k}")
    if m <= k:
        raise RejectedInputError(f"need more than k={k} particles, got {m}")
    gram = np.clip(positions @ positions.T, -1.0, 1.0)
    dist = np.arccos(gram)
    np.fill_diagonal(dist, np.inf)
    # k-th nearest geodesic distance per particle
    rk = np.partition(dist, k - 1, axis=1)[:, k - 1]
    if np.any(rk <= 0.0):
        return float("-inf")
    d_intrinsic = dim - 1
    const = (
        _digamma_int(m)
        - _digamma_int(k)
        + _unit_ball_log_volume(d_intrinsic)
    )
    return float(const + d_intrinsic * np.mean(np.log(rk)))
