"""Post-fit interpretation tools.

Given a fitted model and ground truth (when simulated), this module builds
the empirical joint over model states and agent states, coarse-grains it
by information-theoretic co-clustering, composes action operators and
extracts their modularity subgraphs, and tests inter-event intervals
against an exponential law.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from scipy import stats as sp_stats

from .core import SmjpError, StochasticMatrix, derive_rng
from .ctmc import build_time_grid
from .events import EventSequence
from .switching import FitConfig, SwitchingSMJP, forward_backward


class GridMisalignment(SmjpError):
    """Posterior streams do not share a time grid."""


class DegenerateJoint(SmjpError):
    """The joint distribution has no usable mass for the requested sizes."""


class InvalidAction(SmjpError):
    """Action index outside the model's alphabet."""


class EmptyGraph(SmjpError):
    """Thresholding removed every edge of the operator graph."""


class TooFewEvents(SmjpError):
    """Not enough matching intervals for distribution statistics."""


# ---------------------------------------------------------------------------
# Correspondence between model states and agent states.

@dataclass(frozen=True)
class CorrespondenceMatrix:
    """Time-averaged joint distribution over (model state, agent state).

    ``conditional[s]`` is P(agent state | model state s); rows for model
    states that never carry mass are flagged in ``zero_rows`` and left as
    zero vectors.
    """

    joint: np.ndarray
    row_marginal: np.ndarray
    col_marginal: np.ndarray
    conditional: np.ndarray
    zero_rows: tuple[int, ...]


def state_correspondence(model_posterior: np.ndarray, agent_posterior: np.ndarray) -> CorrespondenceMatrix:
    """Average the outer product of two aligned posterior streams.

    Both arrays must have one row per shared time point; rows are
    probability vectors (one-hot when the agent state is fully known).
    """
    g = np.asarray(model_posterior, dtype=np.float64)
    z = np.asarray(agent_posterior, dtype=np.float64)
    if g.ndim != 2 or z.ndim != 2 or g.shape[0] != z.shape[0] or g.shape[0] == 0:
        raise GridMisalignment(f"posterior shapes {g.shape} and {z.shape} do not share a grid")
    for name, arr in (("model", g), ("agent", z)):
        if np.abs(arr.sum(axis=1) - 1.0).max() > 1e-6 or arr.min() < -1e-12:
            raise SmjpError(f"{name} posterior rows must be distributions")
    joint = g.T @ z / g.shape[0]
    row = joint.sum(axis=1)
    col = joint.sum(axis=0)
    conditional = np.zeros_like(joint)
    nz = row > 0
    conditional[nz] = joint[nz] / row[nz, None]
    zero_rows = tuple(int(i) for i in np.nonzero(~nz)[0])
    return CorrespondenceMatrix(joint, row, col, conditional, zero_rows)


def event_state_posterior(model: SwitchingSMJP, seq: EventSequence, config: FitConfig) -> np.ndarray:
    """Posterior state marginals at the event times, averaged over
    ``config.eval_grids`` virtual-time draws (same streams the held-out
    evaluation uses)."""
    acc = np.zeros((len(seq), model.n_states))
    for g in range(config.eval_grids):
        grid = build_time_grid(seq, model.omega, derive_rng(config.seed, 2, g))
        result = forward_backward(model, grid)
        acc += result.gamma[grid.event_indices]
    return acc / config.eval_grids


# ---------------------------------------------------------------------------
# Information-theoretic co-clustering.

@dataclass(frozen=True)
class CoClustering:
    row_assignment: np.ndarray
    col_assignment: np.ndarray
    n_row_clusters: int
    n_col_clusters: int
    mutual_information_loss: float
    loss_trace: tuple[float, ...]


def mutual_information(joint: np.ndarray) -> float:
    """MI of a joint distribution in nats; zero cells contribute zero."""
    p = np.asarray(joint, dtype=np.float64)
    total = p.sum()
    if total <= 0:
        raise DegenerateJoint("joint distribution has zero mass")
    p = p / total
    r = p.sum(axis=1)
    c = p.sum(axis=0)
    nz = p > 0
    outer = np.outer(r, c)
    return float(np.sum(p[nz] * np.log(p[nz] / outer[nz])))


def _clustered(joint: np.ndarray, rows: np.ndarray, cols: np.ndarray, kr: int, kc: int) -> np.ndarray:
    agg = np.zeros((kr, kc))
    for i in range(joint.shape[0]):
        np.add.at(agg[rows[i]], cols, joint[i])
    return agg


def information_loss(joint: np.ndarray, rows: np.ndarray, cols: np.ndarray, kr: int, kc: int) -> float:
    """Mutual information lost by coarse-graining rows/cols as assigned."""
    return mutual_information(joint) - mutual_information(_clustered(joint, rows, cols, kr, kc))


def _init_assignment(n: int, k: int, live: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Random start covering all k clusters with live rows; zero-mass rows
    fill any clusters that would stay empty (ascending, deterministic) and
    the rest pin to the last cluster."""
    out = np.full(n, k - 1, dtype=np.int64)
    live_idx = np.nonzero(live)[0]
    dead_idx = np.nonzero(~live)[0]
    if live_idx.size + dead_idx.size < k:
        raise DegenerateJoint(f"cannot form {k} clusters from {n} rows")
    perm = rng.permutation(live_idx)
    for pos, idx in enumerate(perm):
        out[idx] = pos % k if pos < k else int(rng.integers(k))
    used = np.zeros(k, dtype=bool)
    used[out[live_idx]] = True
    missing = [c for c in range(k) if not used[c]]
    for c, idx in zip(missing, dead_idx):
        out[idx] = c
    if len(missing) > dead_idx.size:
        raise DegenerateJoint(f"only {live_idx.size} rows carry mass; cannot cover {k} clusters")
    return out


def _sweep_axis(
    joint: np.ndarray,
    assign: np.ndarray,
    other: np.ndarray,
    k: int,
    k_other: int,
    live: np.ndarray,
    by_rows: bool,
) -> bool:
    """One pass of single-element reassignments along one axis; never moves
    a zero-mass element and never empties a cluster. Returns whether any
    element moved."""
    p = joint if by_rows else joint.T
    n = p.shape[0]
    # Element contributions aggregated over the other axis's clusters.
    contrib = np.zeros((n, k_other))
    for j in range(p.shape[1]):
        contrib[:, other[j]] += p[:, j]
    agg = np.zeros((k, k_other))
    for i in range(n):
        agg[assign[i]] += contrib[i]
    sizes = np.bincount(assign[live], minlength=k)
    moved = False
    for i in range(n):
        if not live[i]:
            continue
        cur = assign[i]
        if sizes[cur] <= 1:
            continue
        base = agg[cur] - contrib[i]
        best_c, best_mi = cur, None
        for c in range(k):
            trial = agg.copy()
            trial[cur] = base
            trial[c] += contrib[i]
            mi = mutual_information(trial)
            if best_mi is None or mi > best_mi + 1e-15:
                best_mi, best_c = mi, c
            elif abs(mi - best_mi) <= 1e-15 and c == cur:
                best_c = cur
        if best_c != cur:
            agg[cur] = base
            agg[best_c] += contrib[i]
            sizes[cur] -= 1
            sizes[best_c] += 1
            assign[i] = best_c
            moved = True
    return moved


def cocluster(
    joint: np.ndarray | CorrespondenceMatrix,
    k_rows: int,
    k_cols: int,
    seed: int,
    restarts: int = 20,
    max_sweeps: int = 200,
) -> CoClustering:
    """Alternating row/column reassignment minimizing mutual-information
    loss, restarted ``restarts`` times from seeded random starts; the best
    local optimum wins. Zero-mass rows/columns are placed deterministically
    (they fill otherwise-empty clusters, then pin to the last one).
    """
    p = joint.joint if isinstance(joint, CorrespondenceMatrix) else np.asarray(joint, dtype=np.float64)
    if p.ndim != 2 or np.any(p < 0):
        raise SmjpError("joint must be a non-negative matrix")
    ns, nz = p.shape
    if not 1 <= k_rows <= ns or not 1 <= k_cols <= nz:
        raise SmjpError(f"cluster counts ({k_rows}, {k_cols}) out of range for shape {p.shape}")
    total = p.sum()
    if total <= 0:
        raise DegenerateJoint("joint distribution has zero mass")
    p = p / total
    live_rows = p.sum(axis=1) > 0
    live_cols = p.sum(axis=0) > 0
    base_mi = mutual_information(p)

    best: CoClustering | None = None
    for r in range(restarts):
        rng = derive_rng(seed, 4, r)
        rows = _init_assignment(ns, k_rows, live_rows, rng)
        cols = _init_assignment(nz, k_cols, live_cols, rng)
        trace: list[float] = []
        for _ in range(max_sweeps):
            moved_r = _sweep_axis(p, rows, cols, k_rows, k_cols, live_rows, by_rows=True)
            moved_c = _sweep_axis(p, cols, rows, k_cols, k_rows, live_cols, by_rows=False)
            trace.append(base_mi - mutual_information(_clustered(p, rows, cols, k_rows, k_cols)))
            if not (moved_r or moved_c):
                break
        loss = trace[-1]
        if best is None or loss < best.mutual_information_loss - 1e-15:
            best = CoClustering(rows.copy(), cols.copy(), k_rows, k_cols, max(loss, 0.0), tuple(trace))
    assert best is not None
    return best


@dataclass(frozen=True)
class SizeSelection:
    row_sizes: tuple[int, ...]
    col_sizes: tuple[int, ...]
    loss_surface: np.ndarray
    chosen: tuple[int, int]


def _elbow(sizes: Sequence[int], profile: np.ndarray, zero_tol: float = 1e-12) -> int:
    """Pick the knee of a non-increasing loss profile: the smallest size
    achieving (numerically) zero loss if any does, otherwise the size with
    the largest second difference (flat extension at the ends, ties toward
    smaller sizes)."""
    prof = np.asarray(profile, dtype=np.float64)
    if prof.min() <= zero_tol:
        return sizes[int(np.argmax(prof <= zero_tol))]
    if len(sizes) == 1:
        return sizes[0]
    padded = np.concatenate([prof[:1], prof, prof[-1:]])
    d2 = padded[:-2] - 2.0 * padded[1:-1] + padded[2:]
    return sizes[int(np.argmax(d2))]


def select_cocluster_sizes(
    joint: np.ndarray | CorrespondenceMatrix,
    row_range: Sequence[int],
    col_range: Sequence[int],
    seed: int,
    restarts: int = 20,
) -> SizeSelection:
    """Scan cluster-size pairs, returning the full loss surface and the
    per-axis elbow choice."""
    rows = list(row_range)
    cols = list(col_range)
    if not rows or not cols:
        raise SmjpError("size ranges must be non-empty")
    surface = np.empty((len(rows), len(cols)))
    for i, kr in enumerate(rows):
        for j, kc in enumerate(cols):
            surface[i, j] = cocluster(joint, kr, kc, seed, restarts).mutual_information_loss
    chosen = (_elbow(rows, surface.min(axis=1)), _elbow(cols, surface.min(axis=0)))
    return SizeSelection(tuple(rows), tuple(cols), surface, chosen)


# ---------------------------------------------------------------------------
# Joint action operators and their subgraphs.

@dataclass(frozen=True)
class JointOperator:
    """Composition of two action chains: apply action i's single-step
    operator, then action j's. Partition fields are filled by
    :func:`extract_subgraphs`."""

    i: int
    j: int
    matrix: StochasticMatrix
    subgraph_partition: np.ndarray | None = None
    persistent_subspaces: tuple[tuple[int, ...], ...] | None = None


def joint_operator(model: SwitchingSMJP, i: int, j: int) -> JointOperator:
    if not (0 <= i < model.n_actions and 0 <= j < model.n_actions):
        raise InvalidAction(f"action pair ({i}, {j}) outside 0..{model.n_actions - 1}")
    product = model.chain_stack[i] @ model.chain_stack[j]
    return JointOperator(i=i, j=j, matrix=StochasticMatrix(product))


def modularity(sym: np.ndarray, labels: np.ndarray) -> float:
    """Newman modularity of a partition on a weighted symmetric adjacency
    matrix (self-loops included via the degree convention)."""
    s = np.asarray(sym, dtype=np.float64)
    total = s.sum()
    if total <= 0:
        raise EmptyGraph("graph has no edge mass")
    deg = s.sum(axis=1)
    q = 0.0
    for c in np.unique(labels):
        idx = labels == c
        q += s[np.ix_(idx, idx)].sum() / total - (deg[idx].sum() / total) ** 2
    return float(q)


def _greedy_modularity(sym: np.ndarray) -> tuple[np.ndarray, float]:
    """Agglomerative modularity maximization: merge the best pair until one
    community remains, return the best partition seen along the way."""
    n = sym.shape[0]
    total = sym.sum()
    e = sym / total
    a = e.sum(axis=1)
    members: list[list[int] | None] = [[i] for i in range(n)]
    active = set(range(n))
    q = float(np.trace(e) - np.sum(a**2))

    def snapshot() -> np.ndarray:
        labels = np.empty(n, dtype=np.int64)
        next_id = 0
        for idx in sorted(active, key=lambda c: min(members[c])):
            for node in members[idx]:
                labels[node] = next_id
            next_id += 1
        return labels

    best_q, best_labels = q, snapshot()
    while len(active) > 1:
        pairs = sorted(active)
        gain, pick = None, None
        for xi, x in enumerate(pairs):
            for y in pairs[xi + 1 :]:
                dq = 2.0 * (e[x, y] - a[x] * a[y])
                if gain is None or dq > gain + 1e-15:
                    gain, pick = dq, (x, y)
        x, y = pick
        e[x, :] += e[y, :]
        e[:, x] += e[:, y]
        a[x] += a[y]
        members[x] = members[x] + members[y]
        members[y] = None
        active.remove(y)
        q += gain
        if q > best_q + 1e-12:
            best_q, best_labels = q, snapshot()
    return best_labels, best_q


@dataclass(frozen=True)
class SubgraphResult:
    partition: np.ndarray
    communities: tuple[tuple[int, ...], ...]
    persistent_subspaces: tuple[tuple[int, ...], ...]
    modularity: float


def extract_subgraphs(
    op: JointOperator | np.ndarray,
    threshold: float = 0.05,
    persistence_frac: float = 0.7,
) -> SubgraphResult:
    """Community structure of an operator's weighted graph.

    The operator is symmetrized and entries below ``threshold`` are zeroed;
    communities come from greedy modularity maximization on the resulting
    graph with self-loops removed (self-mass dominates sticky operators'
    degrees and would wash out the between-state structure). A community
    is a persistent subspace when at least ``persistence_frac`` of its
    rows' probability mass stays inside it under the original operator.
    """
    if not 0.0 <= threshold < 1.0:
        raise SmjpError(f"threshold must be in [0, 1), got {threshold!r}")
    w = op.matrix.probs if isinstance(op, JointOperator) else np.asarray(op, dtype=np.float64)
    sym = (w + w.T) / 2.0
    sym = np.where(sym < threshold, 0.0, sym)
    if sym.sum() <= 0:
        raise EmptyGraph("thresholding removed all edges")
    off = sym.copy()
    np.fill_diagonal(off, 0.0)
    if off.sum() <= 0:
        # Only self-loops survive: every state is its own community.
        labels = np.arange(w.shape[0], dtype=np.int64)
        q = 0.0
    else:
        labels, q = _greedy_modularity(off)
    communities = tuple(
        tuple(int(i) for i in np.nonzero(labels == c)[0]) for c in range(labels.max() + 1)
    )
    persistent = []
    for comm in communities:
        idx = np.asarray(comm)
        internal = w[np.ix_(idx, idx)].sum()
        outgoing = w[idx, :].sum()
        if outgoing > 0 and internal >= persistence_frac * outgoing:
            persistent.append(comm)
    return SubgraphResult(labels, communities, tuple(persistent), q)


def attach_subgraphs(op: JointOperator, result: SubgraphResult) -> JointOperator:
    return replace(op, subgraph_partition=result.partition, persistent_subspaces=result.persistent_subspaces)


# ---------------------------------------------------------------------------
# Interval statistics.

@dataclass(frozen=True)
class IntervalStats:
    n_intervals: int
    mean_interval: float
    exp_rate: float
    exp_loglik: float
    ks_statistic: float
    ks_pvalue: float
    hist_counts: np.ndarray
    hist_edges: np.ndarray


def interval_stats(
    seq: EventSequence,
    observation: str | None = None,
    action: str | None = None,
    bin_width: float | None = None,
) -> IntervalStats:
    """Inter-event intervals for events matching the given symbol filters,
    with a maximum-likelihood exponential fit and a KS test against it.

    Raises
    ------
    TooFewEvents
        With fewer than 10 matching intervals.
    """
    mask = np.ones(len(seq), dtype=bool)
    if observation is not None:
        mask &= seq.observations == seq.observation_alphabet.index(observation)
    if action is not None:
        mask &= seq.actions == seq.action_alphabet.index(action)
    times = seq.times[mask]
    intervals = np.diff(times)
    if intervals.size < 10:
        raise TooFewEvents(f"only {intervals.size} matching intervals, need at least 10")
    mean = float(intervals.mean())
    rate = 1.0 / mean
    loglik = intervals.size * np.log(rate) - rate * intervals.sum()
    ks = sp_stats.kstest(intervals, "expon", args=(0.0, mean))
    width = bin_width if bin_width is not None else mean / 4.0
    edges = np.arange(0.0, intervals.max() + width, width)
    if edges.size < 2:
        edges = np.array([0.0, width])
    counts, edges = np.histogram(intervals, bins=edges)
    return IntervalStats(
        n_intervals=int(intervals.size),
        mean_interval=mean,
        exp_rate=rate,
        exp_loglik=float(loglik),
        ks_statistic=float(ks.statistic),
        ks_pvalue=float(ks.pvalue),
        hist_counts=counts,
        hist_edges=edges,
    )
