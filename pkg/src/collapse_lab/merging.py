"""Token merging and unmerging with protected and salient tokens.

Merging pairs are chosen by bipartite soft matching: mergeable tokens are
split into sets A/B by index parity, each A-token proposes its most similar
B-token, and the strongest proposals are accepted. Fusion strengths above
one half are reached by repeating the matching on the surviving
representatives until the requested number of tokens has been removed.
All ties break toward lower token index, so maps are deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInputError, RejectedInputError
from .linalg import ZERO_ROW_TOL
from .tokens import TokenMatrix


@dataclass(frozen=True)
class MergeConfig:
    """fusion_m is the fraction of mergeable tokens removed per application.

    schedule_every applies merging every k layers (0 = never). Protected
    indices and the most distinctive ceil(salient_fraction * N) tokens are
    never merged. seed is reserved for randomized matching variants; the
    default matcher is fully deterministic.
    """

    fusion_m: float = 0.0
    schedule_every: int = 1
    protected_indices: frozenset = field(default_factory=frozenset)
    salient_fraction: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.fusion_m < 1.0:
            raise RejectedInputError(f"fusion_m must be in [0, 1), got {self.fusion_m}")
        if not 0.0 <= self.salient_fraction < 1.0:
            raise RejectedInputError(
                f"salient_fraction must be in [0, 1), got {self.salient_fraction}"
            )
        if self.schedule_every < 0:
            raise RejectedInputError(f"schedule_every must be >= 0, got {self.schedule_every}")
        object.__setattr__(self, "protected_indices", frozenset(self.protected_indices))


@dataclass(frozen=True)
class MergeMap:
    """Cluster assignment from n_src source tokens to n_dst representatives.

    assignment[i] is the destination row of source token i; cluster_sizes
    counts sources per destination and always sums to n_src.
    """

    n_src: int
    n_dst: int
    assignment: np.ndarray
    cluster_sizes: np.ndarray


def select_salient(x: TokenMatrix, fraction: float) -> frozenset:
    """Indices of the ceil(fraction * N) tokens with the lowest mean cosine
    similarity to all other tokens (the most distinctive ones)."""
    if not 0.0 <= fraction < 1.0:
        raise RejectedInputError(f"fraction must be in [0, 1), got {fraction}")
    n = x.n
    count = math.ceil(fraction * n)
    if count == 0:
        return frozenset()
    sims = x.tokens @ x.tokens.T
    mean_to_others = (sims.sum(axis=1) - sims.diagonal()) / (n - 1)
    order = np.lexsort((np.arange(n), mean_to_others))
    return frozenset(int(i) for i in order[:count])


def build_merge_map(x: TokenMatrix, cfg: MergeConfig) -> MergeMap:
    """Choose merge clusters for the current tokens under cfg."""
    n = x.n
    protected = set(cfg.protected_indices)
    for i in protected:
        if not 0 <= int(i) < n:
            raise RejectedInputError(f"protected index {i} out of range for {n} tokens")
    shielded = protected | set(select_salient(x, cfg.salient_fraction))
    mergeable = sorted(set(range(n)) - shielded)
    n_mergeable = len(mergeable)
    r_remove = math.floor(cfg.fusion_m * n_mergeable)
    if r_remove > max(n_mergeable - 1, 0):
        raise RejectedInputError(
            f"cannot remove {r_remove} of {n_mergeable} mergeable tokens"
        )

    # cluster state: member lists keyed by their lowest source index
    members: dict[int, list[int]] = {i: [i] for i in range(n)}
    is_mergeable = {i: (i in set(mergeable)) for i in range(n)}
    reps = {i: x.tokens[i] for i in range(n)}

    def refresh_rep(key: int):
        rows = x.tokens[members[key]]
        mean = rows.mean(axis=0)
        norm = float(np.linalg.norm(mean))
        if norm < ZERO_ROW_TOL:
            raise DegenerateInputError(
                f"cluster at token {key} has a degenerate mean (norm {norm:.3e})"
            )
        reps[key] = mean / norm

    alias: dict[int, int] = {}

    def resolve(key: int) -> int:
        while key in alias:
            key = alias[key]
        return key

    need = r_remove
    first_round = True
    while need > 0:
        keys = sorted(k for k in members if is_mergeable[k])
        if first_round:
            # bipartite soft matching: sides split by token index parity
            side_a = [k for k in keys if k % 2 == 0]
            side_b = [k for k in keys if k % 2 == 1]
            if not side_a or not side_b:
                side_a, side_b = keys[0::2], keys[1::2]
        else:
            # continuation rounds (fusion above one half): every surviving
            # representative proposes its most similar other representative,
            # so redundant clusters keep finding each other regardless of
            # which side round one left them on
            side_a = keys
            side_b = keys
        rep_a = np.stack([reps[k] for k in side_a])
        if first_round:
            rep_b = np.stack([reps[k] for k in side_b])
            sims = rep_a @ rep_b.T
        else:
            sims = rep_a @ rep_a.T
            np.fill_diagonal(sims, -np.inf)
        best = np.argmax(sims, axis=1)  # first max = lowest b key
        scores = sims[np.arange(len(side_a)), best]
        order = np.lexsort((np.array(side_a), -scores))
        merged_this_round = 0
        budget = min(need, len(side_a) if first_round else len(keys) - 1)
        touched = set()
        for ai in order:
            if merged_this_round >= budget:
                break
            a_key = resolve(side_a[int(ai)])
            b_key = resolve(side_b[int(best[int(ai)])])
            if a_key == b_key:
                continue  # already united through an earlier chain
            keep, gone = (a_key, b_key) if a_key < b_key else (b_key, a_key)
            members[keep] = sorted(members[keep] + members[gone])
            del members[gone]
            del is_mergeable[gone]
            del reps[gone]
            alias[gone] = keep
            touched.add(keep)
            merged_this_round += 1
        for key in touched:
            key = resolve(key)
            if key in members:
                refresh_rep(key)
        if merged_this_round == 0:
            raise RejectedInputError(
                f"matching stalled with {need} removals outstanding"
            )
        need -= merged_this_round
        first_round = False

    dst_keys = sorted(members)
    assignment = np.empty(n, dtype=np.intp)
    sizes = np.empty(len(dst_keys), dtype=np.intp)
    for dst, key in enumerate(dst_keys):
        sizes[dst] = len(members[key])
        for src in members[key]:
            assignment[src] = dst
    return MergeMap(
        n_src=n, n_dst=len(dst_keys), assignment=assignment, cluster_sizes=sizes
    )


def apply_merge(x: TokenMatrix, merge_map: MergeMap) -> TokenMatrix:
    """Replace each cluster by the renormalized mean of its source tokens.

    Singleton clusters pass their source row through bit-exactly, so
    protected and salient tokens survive a merge round trip unchanged.
    """
    if merge_map.n_src != x.n:
        raise RejectedInputError(
            f"merge map was built for {merge_map.n_src} tokens, got {x.n}"
        )
    sums = np.zeros((merge_map.n_dst, x.dim))
    np.add.at(sums, merge_map.assignment, x.tokens)
    means = sums / merge_map.cluster_sizes[:, None]
    norms = np.sqrt(np.sum(means * means, axis=1))
    multi = merge_map.cluster_sizes > 1
    bad = np.flatnonzero(multi & (norms < ZERO_ROW_TOL))
    if bad.size:
        raise DegenerateInputError(
            f"cluster {int(bad[0])} has a degenerate mean (norm {norms[bad[0]]:.3e})"
        )
    out = np.empty_like(means)
    out[multi] = means[multi] / norms[multi, None]
    # exact pass-through for singletons
    singleton_src = np.flatnonzero(merge_map.cluster_sizes[merge_map.assignment] == 1)
    out[merge_map.assignment[singleton_src]] = x.tokens[singleton_src]
    return TokenMatrix(tokens=out, unit_norm=x.unit_norm)


def apply_unmerge(y: TokenMatrix, merge_map: MergeMap) -> TokenMatrix:
    """Broadcast each representative back to all of its source positions."""
    if y.n != merge_map.n_dst:
        raise RejectedInputError(
            f"expected {merge_map.n_dst} representative rows, got {y.n}"
        )
    return TokenMatrix(tokens=y.tokens[merge_map.assignment], unit_norm=y.unit_norm)


def effective_downsampling(merge_map: MergeMap) -> float:
    """Realized down-sampling factor d = n_src / n_dst."""
    return merge_map.n_src / merge_map.n_dst
