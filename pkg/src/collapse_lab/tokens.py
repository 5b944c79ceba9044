"""Token matrices on the unit sphere and synthetic initializers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import RejectedInputError
from .linalg import as_matrix, row_normalize_sphere

UNIT_NORM_TOL = 1e-9


@dataclass(frozen=True)
class TokenMatrix:
    """N x dim token features, one row per token.

    unit_norm records whether rows are guaranteed to lie on the unit sphere;
    operations that require sphere geometry check this flag.
    """

    tokens: np.ndarray
    unit_norm: bool = True

    @property
    def n(self) -> int:
        return self.tokens.shape[0]

    @property
    def dim(self) -> int:
        return self.tokens.shape[1]


def make_token_matrix(values, unit_norm: bool = True) -> TokenMatrix:
    """Validate raw values and wrap them as a TokenMatrix."""
    m = as_matrix(values)
    if m.shape[0] < 2 or m.shape[1] < 2:
        raise RejectedInputError(f"need at least 2 tokens and 2 dimensions, got {m.shape}")
    if unit_norm:
        norms = np.sqrt(np.sum(m * m, axis=1))
        if not np.all(np.abs(norms - 1.0) <= UNIT_NORM_TOL):
            worst = int(np.argmax(np.abs(norms - 1.0)))
            raise RejectedInputError(
                f"row {worst} has norm {norms[worst]:.12f}, expected 1 within {UNIT_NORM_TOL}"
            )
    return TokenMatrix(tokens=m, unit_norm=unit_norm)


def init_tokens(
    n: int,
    dim: int,
    distribution: str = "uniform-sphere",
    seed: int = 0,
    clusters: int = 1,
    spread: float = 0.1,
) -> TokenMatrix:
    """Draw n unit-norm tokens in `dim` dimensions, deterministically per seed.

    distribution:
      - "uniform-sphere": isotropic Gaussian rows, normalized.
      - "gaussian-clusters": `clusters` random unit centers; token i belongs to
        center i % clusters and is jittered by `spread` before normalization.
        spread=0 with one cluster yields identical rows (a collapsed start).
    """
    if n < 2 or dim < 2:
        raise RejectedInputError(f"need n >= 2 and dim >= 2, got n={n}, dim={dim}")
    rng = np.random.default_rng(seed)
    if distribution == "uniform-sphere":
        x = rng.standard_normal((n, dim))
    elif distribution == "gaussian-clusters":
        if not 1 <= clusters <= n:
            raise RejectedInputError(f"clusters must be in [1, n], got {clusters}")
        if spread < 0:
            raise RejectedInputError(f"spread must be nonnegative, got {spread}")
        centers = row_normalize_sphere(rng.standard_normal((clusters, dim)))
        x = centers[np.arange(n) % clusters]
        if spread > 0:
            x = x + spread * rng.standard_normal((n, dim))
    else:
        raise RejectedInputError(f"unknown distribution {distribution!r}")
    return TokenMatrix(tokens=row_normalize_sphere(x), unit_norm=True)


def mean_direction_norm(x: TokenMatrix) -> float:
    """Euclidean norm of the average token; 1 means fully collapsed."""
    return float(np.linalg.norm(x.tokens.mean(axis=0)))
