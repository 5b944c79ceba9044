"""Dense numerical kernels: matmul, stabilized row softmax, sphere
normalization, and singular spectra via Jacobi diagonalization of the Gram
matrix.

All functions are pure and operate on float64 arrays. Reductions go through
numpy's fixed-order accumulators, so identical inputs give bit-identical
outputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError, NumericalFailureError, RejectedInputError

# Rows with Euclidean norm below this are treated as zero (antipodal
# cancellation, collapsed cluster means).
ZERO_ROW_TOL = 1e-12

# Singular values below this fraction of the largest are clamped to exactly 0
# before normalization, so they contribute nothing to entropies.
SPECTRUM_CLAMP = 1e-12

JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 100


def as_matrix(a) -> np.ndarray:
    """Coerce input to a 2-D float64 array and validate it."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise RejectedInputError(f"expected a 2-D matrix, got ndim={m.ndim}")
    if m.shape[0] < 1 or m.shape[1] < 1:
        raise RejectedInputError(f"matrix must be at least 1x1, got {m.shape}")
    if not np.all(np.isfinite(m)):
        raise RejectedInputError("matrix contains non-finite entries")
    return m


def matmul(a, b) -> np.ndarray:
    """Matrix product with shape validation."""
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise RejectedInputError(
            f"dimension mismatch: {a.shape} x {b.shape} cannot be multiplied"
        )
    return a @ b


def row_softmax(a, temperature: float = 1.0) -> np.ndarray:
    """Row-wise softmax of a / temperature, stabilized by per-row max
    subtraction. Every output row is nonnegative and sums to 1."""
    a = as_matrix(a)
    if not temperature > 0:
        raise RejectedInputError(f"temperature must be positive, got {temperature}")
    z = a / temperature
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def row_normalize_sphere(a) -> np.ndarray:
    """Scale every row to unit Euclidean norm."""
    a = as_matrix(a)
    norms = np.sqrt(np.sum(a * a, axis=1))
    bad = np.flatnonzero(norms < ZERO_ROW_TOL)
    if bad.size:
        raise DegenerateInputError(
            f"row {int(bad[0])} has norm {norms[bad[0]]:.3e} below {ZERO_ROW_TOL}"
        )
    return a / norms[:, None]


@dataclass(frozen=True)
class Spectrum:
    """Singular values sorted nonincreasing, plus the same list scaled to
    sum 1 (all zeros for a zero matrix)."""

    values: np.ndarray
    normalized: np.ndarray


def _rotation_rounds(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Round-robin schedule covering every index pair exactly once per sweep.

    Each round is a set of disjoint pairs, so their rotations commute and can
    be applied with vectorized row/column updates.
    """
    m = n + (n % 2)  # pad odd n with a bye slot
    arr = list(range(m))
    rounds = []
    for _ in range(m - 1):
        ps, qs = [], []
        for i in range(m // 2):
            a, b = arr[i], arr[m - 1 - i]
            if a < n and b < n:
                ps.append(min(a, b))
                qs.append(max(a, b))
        rounds.append((np.array(ps, dtype=np.intp), np.array(qs, dtype=np.intp)))
        arr = [arr[0], arr[-1]] + arr[1:-1]
    return rounds


_ROUNDS_CACHE: dict[int, list[tuple[np.ndarray, np.ndarray]]] = {}


def _cached_rounds(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    rounds = _ROUNDS_CACHE.get(n)
    if rounds is None:
        rounds = _rotation_rounds(n)
        if len(_ROUNDS_CACHE) > 64:
            _ROUNDS_CACHE.clear()
        _ROUNDS_CACHE[n] = rounds
    return rounds


def jacobi_eigvals_sym(
    g, tol: float = JACOBI_TOL, max_sweeps: int = JACOBI_MAX_SWEEPS
) -> np.ndarray:
    """Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.

    Sweeps stop once the off-diagonal Frobenius norm falls below
    tol * ||g||_F; exceeding max_sweeps raises NumericalFailureError with the
    remaining relative residual.
    """
    g = as_matrix(g)
    n = g.shape[0]
    if g.shape[1] != n:
        raise RejectedInputError(f"symmetric eigensolver needs a square matrix, got {g.shape}")
    a = 0.5 * (g + g.T)
    if n == 1:
        return a.diagonal().copy()
    fro = float(np.linalg.norm(a))
    if fro == 0.0:
        return np.zeros(n)
    rounds = _cached_rounds(n)
    off_mask = ~np.eye(n, dtype=bool)
    off = 0.0
    for _ in range(max_sweeps):
        # norm of the off-diagonal entries themselves; the subtraction form
        # sqrt(||A||^2 - ||diag||^2) bottoms out at sqrt(eps) * ||A||
        off = float(np.sqrt(np.sum(a[off_mask] ** 2)))
        if off <= tol * fro:
            return a.diagonal().copy()
        for p_idx, q_idx in rounds:
            apq = a[p_idx, q_idx]
            live = np.abs(apq) > 0.0
            if not live.any():
                continue
            app = a[p_idx, p_idx]
            aqq = a[q_idx, q_idx]
            # stable rotation angle (Golub & Van Loan, sec. 8.5); hypot keeps
            # huge tau from overflowing, dead pairs get the identity rotation
            with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
                tau = (aqq - app) / (2.0 * apq)
                t = np.where(tau >= 0.0, 1.0, -1.0) / (np.abs(tau) + np.hypot(1.0, tau))
            t = np.where(live & np.isfinite(t), t, 0.0)
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = t * c
            rp = a[p_idx, :]
            rq = a[q_idx, :]
            a[p_idx, :] = c[:, None] * rp - s[:, None] * rq
            a[q_idx, :] = s[:, None] * rp + c[:, None] * rq
            cp = a[:, p_idx]
            cq = a[:, q_idx]
            a[:, p_idx] = cp * c - cq * s
            a[:, q_idx] = cp * s + cq * c
            # rotations zero these analytically; pin them to kill roundoff drift
            a[p_idx, q_idx] = 0.0
            a[q_idx, p_idx] = 0.0
    raise NumericalFailureError(
        f"Jacobi sweep cap ({max_sweeps}) reached with relative off-diagonal "
        f"residual {off / fro:.3e}",
        residual=off / fro,
    )


def singular_spectrum(a) -> Spectrum:
    """Singular values of a matrix, sorted nonincreasing.

    Diagonalizes the smaller Gram matrix (A^T A or A A^T) with Jacobi
    rotations and takes square roots, which is exact for the sizes used
    here and keeps the kernel self-contained.
    """
    a = as_matrix(a)
    rows, cols = a.shape
    gram = a.T @ a if cols <= rows else a @ a.T
    eigs = jacobi_eigvals_sym(gram)
    eigs = np.where(eigs > 0.0, eigs, 0.0)
    values = np.sort(np.sqrt(eigs))[::-1]
    if values[0] > 0.0:
        values = np.where(values < SPECTRUM_CLAMP * values[0], 0.0, values)
        normalized = values / values.sum()
    else:
        values = np.zeros_like(values)
        normalized = np.zeros_like(values)
    return Spectrum(values=values, normalized=normalized)
