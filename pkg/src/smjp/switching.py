"""Action-switched latent jump-process model and its EM fitting loop.

The model holds one generator per action. Inference runs on a time grid of
event and virtual points: the discrete chain for the action in force at
grid step t drives the transition t -> t+1, virtual points contribute a
unit emission likelihood, and the latent prior at the first grid point is
uniform (the initial distribution is not a learned parameter).

Fitting alternates three phases: draw fresh virtual times from the current
rates, run discrete-chain EM to convergence on those fixed grids, then map
the re-estimated chains back to generators via A = (B - I) * omega and
recompute the uniformization rate. The loop stops when held-out
log-likelihood stabilizes.

Random streams are derived from the config seed with fixed branch codes:
(1, outer_iteration, sequence, grid) for training grids, (2, grid) for
evaluation grids (shared across sequences so evaluation is additive), and
(3, n_states, restart) for random initializations.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, replace
from functools import cached_property
from typing import Sequence, TextIO

import numpy as np

from .core import (
    Alphabet,
    GeneratorMatrix,
    NotStochastic,
    SmjpError,
    StochasticMatrix,
    derive_rng,
    index_alphabet,
    log_domain_dot,
    logsumexp,
    validate_generator,
)
from .ctmc import NO_OBSERVATION, TimeGrid, build_time_grid, default_omega, uniformize
from .events import EventSequence, split_chronological

# Probability mass on a structurally forbidden transition above this is an
# estimation bug rather than float noise.
STRUCTURAL_TOL = 1e-6

MODEL_HEADER = "smjp-model v1"


class ZeroProbabilityObservation(SmjpError):
    """An observation has probability zero under every reachable state."""


class InconsistentShapes(SmjpError):
    """Posterior inputs do not match the model/grid dimensions."""


class EmptyStatistics(SmjpError):
    """No expected counts were accumulated before the update step."""


class StructureViolation(SmjpError):
    """A structurally-zero transition received non-negligible mass."""


class NonFiniteLikelihood(SmjpError):
    """The fitting loop produced a non-finite log-likelihood."""


class ModelFormatError(SmjpError):
    """A serialized model document is malformed or has an unknown version."""


@dataclass(frozen=True)
class SwitchingSMJP:
    """Full model: one generator per action, shared (or per-action)
    categorical emission matrix, and the uniformization rate.

    The discrete chains are derived, not stored: ``chain_stack[k]`` is
    always exactly ``I + generators[k]/omega``. ``structural_masks[k]``
    marks off-diagonal transitions constrained to zero rate.
    """

    states: Alphabet
    actions: Alphabet
    observations: Alphabet
    generators: tuple[GeneratorMatrix, ...]
    emission: np.ndarray
    omega: float
    structural_masks: tuple[np.ndarray, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "generators", tuple(self.generators))
        object.__setattr__(self, "emission", np.array(self.emission, dtype=np.float64, copy=True))
        n, k, o = len(self.states), len(self.actions), len(self.observations)
        if len(self.generators) != k:
            raise InconsistentShapes(f"expected {k} generators, got {len(self.generators)}")
        for g in self.generators:
            if g.n_states != n:
                raise InconsistentShapes("generator size does not match state alphabet")
        e = self.emission
        if e.shape not in ((n, o), (k, n, o)):
            raise InconsistentShapes(f"emission shape {e.shape} incompatible with (N={n}, K={k}, O={o})")
        rows = e.reshape(-1, o)
        if rows.min(initial=0.0) < -1e-12 or np.abs(rows.sum(axis=1) - 1.0).max(initial=0.0) > 1e-10:
            raise NotStochastic("emission rows must be stochastic")
        e.setflags(write=False)
        if self.omega <= 0:
            raise SmjpError(f"omega must be positive, got {self.omega!r}")
        if self.structural_masks is not None:
            masks = tuple(np.array(m, dtype=bool, copy=True) for m in self.structural_masks)
            if len(masks) != k or any(m.shape != (n, n) for m in masks):
                raise InconsistentShapes("need one NxN mask per action")
            for m in masks:
                if np.any(np.diag(m)):
                    raise SmjpError("structural masks apply to off-diagonal entries only")
                m.setflags(write=False)
            object.__setattr__(self, "structural_masks", masks)

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def n_actions(self) -> int:
        return len(self.actions)

    @property
    def n_observations(self) -> int:
        return len(self.observations)

    @property
    def per_action_emission(self) -> bool:
        return self.emission.ndim == 3

    @cached_property
    def chain_stack(self) -> np.ndarray:
        """(K, N, N) stack of uniformized single-step chains."""
        return np.stack([uniformize(g, self.omega).probs for g in self.generators])

    @property
    def discrete_chains(self) -> tuple[StochasticMatrix, ...]:
        return tuple(StochasticMatrix(b) for b in self.chain_stack)


@dataclass(frozen=True)
class ForwardBackwardResult:
    """Posterior quantities over one grid: log filters, log smoothers,
    state marginals, transition-pair marginals and per-step normalizers."""

    log_alpha: np.ndarray
    log_beta: np.ndarray
    gamma: np.ndarray
    xi: np.ndarray
    log_likelihood: float
    per_step_scaling: np.ndarray


@dataclass(frozen=True)
class FitConfig:
    """Knobs for the fitting loop; defaults follow the shipped pipeline."""

    seed: int = 0
    inner_iterations: int = 10
    outer_cap: int = 200
    tol: float = 1e-4
    inner_tol: float = 1e-7
    grids_per_iteration: int = 1
    eval_grids: int = 5
    restarts: int = 5
    holdout_fraction: float = 0.2
    plateau_eps: float = 0.01
    omega_factor: float = 2.0
    omega_prior_scale: float = 1.0
    emission_floor: float = 0.0
    per_action_emission: bool = False


@dataclass(frozen=True)
class FitReport:
    final_model: SwitchingSMJP
    train_ll_trace: tuple[float, ...]
    inner_ll_traces: tuple[tuple[float, ...], ...]
    heldout_trace: tuple[float, ...]
    heldout_ll: float
    iterations: int
    converged: bool
    actions_without_data: tuple[int, ...] = ()


@dataclass
class SufficientStats:
    """Expected counts accumulated over one or more grids.

    ``trans[k]`` sums transition-pair posteriors over steps whose action
    is k; ``emit`` sums state posteriors per observed symbol (per action
    in the switched-emission variant); ``action_steps`` counts transition
    steps per action and doubles as the partitioning instrumentation.
    """

    trans: np.ndarray
    emit: np.ndarray
    action_steps: np.ndarray
    n_grids: int = 0

    @classmethod
    def zeros(cls, n_states: int, n_actions: int, n_observations: int, per_action_emission: bool = False) -> "SufficientStats":
        eshape = (n_actions, n_states, n_observations) if per_action_emission else (n_states, n_observations)
        return cls(
            trans=np.zeros((n_actions, n_states, n_states)),
            emit=np.zeros(eshape),
            action_steps=np.zeros(n_actions, dtype=np.int64),
        )


def _check_grid(model: SwitchingSMJP, grid: TimeGrid) -> None:
    if len(grid) == 0:
        raise InconsistentShapes("grid is empty")
    if grid.actions.min() < 0 or grid.actions.max() >= model.n_actions:
        raise InconsistentShapes("grid action index outside the model's action alphabet")
    obs = grid.observations
    real = obs[obs != NO_OBSERVATION]
    if real.size and (real.min() < 0 or real.max() >= model.n_observations):
        raise InconsistentShapes("grid observation index outside the model's alphabet")


def _emission_table(model: SwitchingSMJP, grid: TimeGrid) -> np.ndarray:
    """(T, N) likelihood of each grid point's observation per state;
    virtual points contribute ones."""
    t, n = len(grid), model.n_states
    e = np.ones((t, n))
    mask = grid.observations != NO_OBSERVATION
    if mask.any():
        if model.per_action_emission:
            e[mask] = model.emission[grid.actions[mask], :, grid.observations[mask]]
        else:
            e[mask] = model.emission[:, grid.observations[mask]].T
    return e


def _filter_scaled(chains: np.ndarray, e: np.ndarray, kidx: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Normalized forward pass; returns (alpha_hat, per-step normalizers)."""
    t, n = e.shape
    alpha = np.empty((t, n))
    c = np.empty(t)
    a = e[0] / n
    c0 = a.sum()
    if not (np.isfinite(c0) and c0 > 0):
        raise ZeroProbabilityObservation("observation at grid step 0 has zero likelihood")
    alpha[0] = a / c0
    c[0] = c0
    for i in range(t - 1):
        v = (alpha[i] @ chains[kidx[i]]) * e[i + 1]
        ci = v.sum()
        if not (np.isfinite(ci) and ci > 0):
            raise ZeroProbabilityObservation(f"observation at grid step {i + 1} has zero likelihood")
        alpha[i + 1] = v / ci
        c[i + 1] = ci
    return alpha, c


def _smooth_scaled(chains: np.ndarray, e: np.ndarray, kidx: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Backward pass scaled by the forward normalizers, so that
    alpha_hat * beta_hat is the state marginal directly."""
    t, n = e.shape
    beta = np.empty((t, n))
    beta[t - 1] = 1.0
    for i in range(t - 2, -1, -1):
        beta[i] = chains[kidx[i]] @ (e[i + 1] * beta[i + 1]) / c[i + 1]
    return beta


def forward(model: SwitchingSMJP, grid: TimeGrid) -> tuple[np.ndarray, float]:
    """Forward filter over the grid.

    Returns
    -------
    log_alpha : (T, N) array
        Log joint of the observations up to t and the state at t.
    log_likelihood : float
        Log probability of all observations on this grid.
    """
    _check_grid(model, grid)
    e = _emission_table(model, grid)
    alpha, c = _filter_scaled(model.chain_stack, e, grid.actions)
    logc = np.cumsum(np.log(c))
    with np.errstate(divide="ignore"):
        log_alpha = np.log(alpha) + logc[:, None]
    return log_alpha, float(logc[-1])


def forward_logspace(model: SwitchingSMJP, grid: TimeGrid) -> tuple[np.ndarray, float]:
    """Reference forward filter computed entirely in the log domain.

    Slower than :func:`forward`; kept as an independent implementation for
    cross-checking the scaled recursion on long sequences.
    """
    _check_grid(model, grid)
    e = _emission_table(model, grid)
    chains = model.chain_stack
    t, n = e.shape
    log_alpha = np.empty((t, n))
    with np.errstate(divide="ignore"):
        log_e = np.log(e)
        log_alpha[0] = log_e[0] - np.log(n)
    for i in range(t - 1):
        log_alpha[i + 1] = log_domain_dot(log_alpha[i], chains[grid.actions[i]]) + log_e[i + 1]
    ll = logsumexp(log_alpha[-1])
    if not np.isfinite(ll):
        raise ZeroProbabilityObservation("sequence has zero probability under the model")
    return log_alpha, float(ll)


def backward(model: SwitchingSMJP, grid: TimeGrid) -> np.ndarray:
    """Backward smoother; ``log_beta[T-1]`` is the zero vector."""
    _check_grid(model, grid)
    e = _emission_table(model, grid)
    chains = model.chain_stack
    t, n = e.shape
    kidx = grid.actions
    beta = np.empty((t, n))
    log_scale = np.zeros(t)
    beta[t - 1] = 1.0
    for i in range(t - 2, -1, -1):
        v = chains[kidx[i]] @ (e[i + 1] * beta[i + 1])
        m = v.max()
        if not (np.isfinite(m) and m > 0):
            raise ZeroProbabilityObservation(f"zero backward mass at grid step {i}")
        beta[i] = v / m
        log_scale[i] = log_scale[i + 1] + np.log(m)
    with np.errstate(divide="ignore"):
        return np.log(beta) + log_scale[:, None]


def posterior_xi(
    model: SwitchingSMJP,
    log_alpha: np.ndarray,
    log_beta: np.ndarray,
    grid: TimeGrid,
) -> tuple[np.ndarray, np.ndarray]:
    """Transition-pair posteriors xi and state marginals gamma.

    ``xi[t, i, j]`` is the posterior probability of being in state i at
    grid step t and state j at step t+1; each slice is normalized.
    ``gamma[t]`` marginalizes ``xi[t]`` over the destination (the final
    step comes from the filter/smoother product).
    """
    _check_grid(model, grid)
    t, n = len(grid), model.n_states
    if log_alpha.shape != (t, n) or log_beta.shape != (t, n):
        raise InconsistentShapes(
            f"posterior inputs {log_alpha.shape}/{log_beta.shape} do not match grid/model ({t}, {n})"
        )
    e = _emission_table(model, grid)
    with np.errstate(divide="ignore"):
        log_b = np.log(model.chain_stack)
        log_e = np.log(e)
    xi = np.empty((t - 1, n, n)) if t > 1 else np.empty((0, n, n))
    for i in range(t - 1):
        s = log_alpha[i][:, None] + log_b[grid.actions[i]] + (log_e[i + 1] + log_beta[i + 1])[None, :]
        z = logsumexp(s.ravel())
        if not np.isfinite(z):
            raise ZeroProbabilityObservation(f"zero posterior mass at grid step {i}")
        xi[i] = np.exp(s - z)
    gamma = np.empty((t, n))
    if t > 1:
        gamma[: t - 1] = xi.sum(axis=2)
    last = log_alpha[t - 1] + log_beta[t - 1]
    gamma[t - 1] = np.exp(last - logsumexp(last))
    return xi, gamma


def forward_backward(model: SwitchingSMJP, grid: TimeGrid) -> ForwardBackwardResult:
    """One full smoothing pass via the scaled recursions."""
    _check_grid(model, grid)
    e = _emission_table(model, grid)
    chains = model.chain_stack
    kidx = grid.actions
    alpha, c = _filter_scaled(chains, e, kidx)
    beta = _smooth_scaled(chains, e, kidx, c)
    t, n = e.shape
    logc = np.cumsum(np.log(c))
    with np.errstate(divide="ignore"):
        log_alpha = np.log(alpha) + logc[:, None]
        log_beta = np.log(beta) + (logc[-1] - logc)[:, None]
    gamma = alpha * beta
    if t > 1:
        w = (e[1:] * beta[1:]) / c[1:, None]
        xi = alpha[:-1, :, None] * chains[kidx[:-1]] * w[:, None, :]
    else:
        xi = np.empty((0, n, n))
    return ForwardBackwardResult(
        log_alpha=log_alpha,
        log_beta=log_beta,
        gamma=gamma,
        xi=xi,
        log_likelihood=float(logc[-1]),
        per_step_scaling=c,
    )


def _accumulate_stats(
    chains: np.ndarray,
    emission: np.ndarray,
    grid: TimeGrid,
    stats: SufficientStats,
) -> float:
    """E-step on one grid with the working parameter arrays; adds expected
    counts into ``stats`` and returns the grid log-likelihood."""
    t = len(grid)
    n = chains.shape[1]
    k = chains.shape[0]
    kidx = grid.actions
    obs = grid.observations
    e = np.ones((t, n))
    mask = obs != NO_OBSERVATION
    if mask.any():
        if emission.ndim == 3:
            e[mask] = emission[kidx[mask], :, obs[mask]]
        else:
            e[mask] = emission[:, obs[mask]].T
    alpha, c = _filter_scaled(chains, e, kidx)
    beta = _smooth_scaled(chains, e, kidx, c)

    if t > 1:
        chunk = max(1, int(2_000_000 // (n * n)))
        for lo in range(0, t - 1, chunk):
            hi = min(t - 1, lo + chunk)
            w = (e[lo + 1 : hi + 1] * beta[lo + 1 : hi + 1]) / c[lo + 1 : hi + 1][:, None]
            xi = alpha[lo:hi, :, None] * chains[kidx[lo:hi]] * w[:, None, :]
            for a in range(k):
                sel = kidx[lo:hi] == a
                if sel.any():
                    stats.trans[a] += xi[sel].sum(axis=0)
        stats.action_steps += np.bincount(kidx[: t - 1], minlength=k)

    gamma = alpha * beta
    n_obs = emission.shape[-1]
    if emission.ndim == 3:
        for a in range(k):
            for o in range(n_obs):
                sel = mask & (kidx == a) & (obs == o)
                if sel.any():
                    stats.emit[a, :, o] += gamma[sel].sum(axis=0)
    else:
        for o in range(n_obs):
            sel = mask & (obs == o)
            if sel.any():
                stats.emit[:, o] += gamma[sel].sum(axis=0)
    stats.n_grids += 1
    return float(np.log(c).sum())


def m_step(
    stats: SufficientStats,
    chains_old: np.ndarray,
    emission_old: np.ndarray,
    emission_floor: float = 0.0,
) -> tuple[np.ndarray, np.ndarray, tuple[int, ...]]:
    """Reestimate chains and emission from expected counts.

    Transition rows and emission rows with no accumulated mass keep their
    previous values; an action with no steps at all leaves its whole chain
    untouched and is reported back.

    Raises
    ------
    EmptyStatistics
        If no grid contributed any transition step.
    """
    if stats.n_grids == 0 or stats.action_steps.sum() == 0:
        raise EmptyStatistics("no expected counts accumulated")
    k, n, _ = chains_old.shape
    new_chains = chains_old.copy()
    untouched = []
    for a in range(k):
        if stats.action_steps[a] == 0:
            untouched.append(a)
            continue
        denom = stats.trans[a].sum(axis=1)
        rows = denom > 0
        new_chains[a][rows] = stats.trans[a][rows] / denom[rows, None]
    new_emission = emission_old.copy()
    flat_counts = stats.emit.reshape(-1, stats.emit.shape[-1])
    flat_out = new_emission.reshape(-1, new_emission.shape[-1])
    denom = flat_counts.sum(axis=1)
    rows = denom > 0
    if emission_floor > 0:
        floored = flat_counts[rows] + emission_floor
        flat_out[rows] = floored / floored.sum(axis=1, keepdims=True)
    else:
        flat_out[rows] = flat_counts[rows] / denom[rows, None]
    return new_chains, new_emission, tuple(untouched)


def update_generator(
    b_new: StochasticMatrix | np.ndarray,
    omega_old: float,
    structural_mask: np.ndarray | None = None,
) -> GeneratorMatrix:
    """Map a reestimated discrete chain back to a generator.

    ``A = (B - I) * omega``; off-diagonal entries under the structural
    mask must carry at most ``STRUCTURAL_TOL`` probability, and whatever
    float dust they hold is folded back into the diagonal so the
    constraint stays exact.

    Raises
    ------
    StructureViolation, NotStochastic
    """
    b = b_new.probs if isinstance(b_new, StochasticMatrix) else np.asarray(b_new, dtype=np.float64)
    if b.ndim != 2 or b.shape[0] != b.shape[1]:
        raise InconsistentShapes(f"chain must be square, got {b.shape}")
    sums = b.sum(axis=1)
    if np.abs(sums - 1.0).max(initial=0.0) > 1e-8 or b.min(initial=0.0) < -1e-12:
        raise NotStochastic("updated chain is not row-stochastic")
    if omega_old <= 0:
        raise SmjpError(f"omega must be positive, got {omega_old!r}")
    b = b / sums[:, None]
    if structural_mask is not None:
        mask = np.asarray(structural_mask, dtype=bool)
        off = mask & ~np.eye(b.shape[0], dtype=bool)
        if np.any(b[off] > STRUCTURAL_TOL):
            worst = float(b[off].max())
            raise StructureViolation(f"masked transition carries probability {worst!r}")
        b = b.copy()
        moved = np.where(off, b, 0.0).sum(axis=1)
        b[off] = 0.0
        b[np.diag_indices_from(b)] += moved
    return validate_generator((b - np.eye(b.shape[0])) * omega_old)


def inner_em(
    model: SwitchingSMJP,
    grids: Sequence[TimeGrid],
    config: FitConfig,
) -> tuple[np.ndarray, np.ndarray, tuple[float, ...], tuple[int, ...]]:
    """Discrete-chain EM on fixed grids.

    Returns the working (chains, emission) arrays, the log-likelihood of
    the parameters entering each pass (non-decreasing), and the actions
    that never appeared in the grids.
    """
    chains = model.chain_stack.copy()
    emission = np.array(model.emission, copy=True)
    trace: list[float] = []
    untouched: tuple[int, ...] = ()
    for _ in range(config.inner_iterations):
        stats = SufficientStats.zeros(
            model.n_states, model.n_actions, model.n_observations, emission.ndim == 3
        )
        ll = 0.0
        for grid in grids:
            ll += _accumulate_stats(chains, emission, grid, stats)
        chains, emission, untouched = m_step(stats, chains, emission, config.emission_floor)
        trace.append(ll)
        if len(trace) >= 2:
            rel = abs(trace[-1] - trace[-2]) / max(1.0, abs(trace[-2]))
            if rel < config.inner_tol:
                break
    return chains, emission, tuple(trace), untouched


def rebuild_model(model: SwitchingSMJP, chains: np.ndarray, emission: np.ndarray, config: FitConfig) -> SwitchingSMJP:
    """Fold reestimated chains into new generators and refresh omega."""
    masks = model.structural_masks or (None,) * model.n_actions
    gens = tuple(update_generator(chains[a], model.omega, masks[a]) for a in range(model.n_actions))
    omega = default_omega(list(gens), config.omega_factor)
    return replace(model, generators=gens, emission=emission, omega=omega)


def held_out_loglik(model: SwitchingSMJP, sequences: Sequence[EventSequence], config: FitConfig) -> float:
    """Sum over sequences of the grid-averaged forward log-likelihood.

    Each sequence is scored on ``config.eval_grids`` fresh virtual-time
    draws and the draws' log-likelihoods are averaged. Grid streams depend
    only on (seed, draw index), so duplicating a sequence exactly doubles
    the result.
    """
    if not sequences:
        raise SmjpError("need at least one sequence to evaluate")
    total = 0.0
    for seq in sequences:
        lls = []
        for g in range(config.eval_grids):
            grid = build_time_grid(seq, model.omega, derive_rng(config.seed, 2, g))
            _check_grid(model, grid)
            e = _emission_table(model, grid)
            _, c = _filter_scaled(model.chain_stack, e, grid.actions)
            lls.append(np.log(c).sum())
        total += float(np.mean(lls))
    return total


def fit(init: SwitchingSMJP, sequences: Sequence[EventSequence], config: FitConfig) -> FitReport:
    """Outer uniformization-EM loop from an explicit starting model.

    Each sequence is split chronologically; the trailing
    ``config.holdout_fraction`` is only ever used for the stopping rule
    and the reported held-out log-likelihood. With
    ``inner_iterations == 0`` (or ``outer_cap == 0``) the model is
    returned unchanged.
    """
    if not sequences:
        raise SmjpError("need at least one training sequence")
    for seq in sequences:
        if seq.observation_alphabet.labels != init.observations.labels:
            raise InconsistentShapes(f"sequence {seq.id!r} observation alphabet differs from the model's")
        if seq.action_alphabet.labels != init.actions.labels:
            raise InconsistentShapes(f"sequence {seq.id!r} action alphabet differs from the model's")
    splits = [split_chronological(s, config.holdout_fraction) for s in sequences]
    train = [h for h, _ in splits]
    holdout = [t for _, t in splits if len(t) > 0]

    def signal(model: SwitchingSMJP, train_ll: float) -> float:
        if holdout:
            return held_out_loglik(model, holdout, config)
        return train_ll

    if config.inner_iterations == 0 or config.outer_cap == 0:
        hll = signal(init, np.nan) if holdout else float("nan")
        return FitReport(init, (), (), (), hll, 0, False)

    model = init
    train_trace: list[float] = []
    inner_traces: list[tuple[float, ...]] = []
    heldout_trace: list[float] = []
    no_data: set[int] = set()
    converged = False
    streak = 0
    iterations = 0
    for outer in range(config.outer_cap):
        grids = [
            build_time_grid(seq, model.omega, derive_rng(config.seed, 1, outer, si, g))
            for si, seq in enumerate(train)
            for g in range(config.grids_per_iteration)
        ]
        chains, emission, trace, untouched = inner_em(model, grids, config)
        no_data.update(untouched)
        model = rebuild_model(model, chains, emission, config)
        hll = signal(model, trace[-1])
        if not np.isfinite(hll):
            raise NonFiniteLikelihood(f"non-finite held-out log-likelihood at outer iteration {outer}")
        train_trace.append(trace[-1])
        inner_traces.append(trace)
        heldout_trace.append(hll)
        iterations = outer + 1
        if outer >= 1:
            rel = abs(heldout_trace[-1] - heldout_trace[-2]) / max(1.0, abs(heldout_trace[-2]))
            streak = streak + 1 if rel < config.tol else 0
            if streak >= 2:
                converged = True
                break
    heldout_ll = heldout_trace[-1] if holdout else float("nan")
    return FitReport(
        final_model=model,
        train_ll_trace=tuple(train_trace),
        inner_ll_traces=tuple(inner_traces),
        heldout_trace=tuple(heldout_trace),
        heldout_ll=heldout_ll,
        iterations=iterations,
        converged=converged,
        actions_without_data=tuple(sorted(no_data)),
    )


def init_random_model(
    n_states: int,
    observation_alphabet: Alphabet,
    action_alphabet: Alphabet,
    config: FitConfig,
    seed_branch: tuple[int, ...],
    event_rate: float,
) -> SwitchingSMJP:
    """Random restart: flat-Dirichlet chains and emission, omega set from
    the data's empirical event rate."""
    rng = derive_rng(config.seed, *seed_branch)
    n, k, o = n_states, len(action_alphabet), len(observation_alphabet)
    omega = config.omega_prior_scale * event_rate
    if not omega > 0:
        omega = 1.0
    chains = np.stack([rng.dirichlet(np.ones(n), size=n) for _ in range(k)])
    if config.per_action_emission:
        emission = np.stack([rng.dirichlet(np.ones(o), size=n) for _ in range(k)])
    else:
        emission = rng.dirichlet(np.ones(o), size=n)
    gens = tuple(update_generator(chains[a], omega) for a in range(k))
    return SwitchingSMJP(
        states=index_alphabet("state", n, "s"),
        actions=action_alphabet,
        observations=observation_alphabet,
        generators=gens,
        emission=emission,
        omega=omega,
    )


def fit_best(sequences: Sequence[EventSequence], n_states: int, config: FitConfig) -> FitReport:
    """Run ``config.restarts`` independent random initializations and keep
    the fit with the best held-out log-likelihood."""
    if not sequences:
        raise SmjpError("need at least one training sequence")
    rate = float(np.mean([s.event_rate for s in sequences]))
    best: FitReport | None = None
    for r in range(config.restarts):
        init = init_random_model(
            n_states,
            sequences[0].observation_alphabet,
            sequences[0].action_alphabet,
            config,
            (3, n_states, r),
            rate,
        )
        report = fit(init, sequences, config)
        score = report.heldout_ll if np.isfinite(report.heldout_ll) else report.train_ll_trace[-1]
        if best is None or score > _report_score(best):
            best = report
    assert best is not None
    return best


def _report_score(report: FitReport) -> float:
    return report.heldout_ll if np.isfinite(report.heldout_ll) else report.train_ll_trace[-1]


@dataclass(frozen=True)
class StateSelection:
    n_values: tuple[int, ...]
    heldout_lls: tuple[float, ...]
    chosen_n: int
    reports: dict[int, FitReport]
    failures: dict[int, str]


def select_num_states(
    sequences: Sequence[EventSequence],
    n_range: Sequence[int],
    config: FitConfig,
) -> StateSelection:
    """Fit one model per candidate state count and pick the plateau point.

    The chosen count is the smallest one whose held-out log-likelihood is
    within ``config.plateau_eps`` of the curve's range below the maximum;
    ties therefore resolve toward fewer states. Candidate counts whose fit
    fails are recorded and skipped.
    """
    n_values = list(n_range)
    if not n_values or any(b <= a for a, b in zip(n_values, n_values[1:])):
        raise SmjpError("state-count range must be non-empty and ascending")
    lls: list[float] = []
    reports: dict[int, FitReport] = {}
    failures: dict[int, str] = {}
    for n in n_values:
        try:
            rep = fit_best(sequences, n, config)
        except SmjpError as exc:
            failures[n] = str(exc)
            lls.append(float("nan"))
            continue
        reports[n] = rep
        lls.append(_report_score(rep))
    finite = [(n, ll) for n, ll in zip(n_values, lls) if np.isfinite(ll)]
    if not finite:
        raise NonFiniteLikelihood("every candidate state count failed")
    values = np.array([ll for _, ll in finite])
    # Floor the plateau width at float resolution of the likelihood so a
    # genuinely flat curve resolves to the smallest candidate.
    eps = max(
        config.plateau_eps * float(values.max() - values.min()),
        1e-9 * max(1.0, float(np.abs(values).max())),
    )
    cutoff = values.max() - eps
    chosen = next(n for n, ll in finite if ll >= cutoff)
    return StateSelection(tuple(n_values), tuple(lls), chosen, reports, failures)


# ---------------------------------------------------------------------------
# Serialization: one self-describing text document per model.

def _fmt_row(row: np.ndarray) -> str:
    return " ".join(repr(float(x)) for x in row)


def save_model(model: SwitchingSMJP, target: str | TextIO, metadata: dict[str, str] | None = None) -> None:
    """Write the versioned text document for a model.

    Floats are written with shortest round-trip repr, so save -> load ->
    save is byte-identical for all finite values.
    """
    own = isinstance(target, str)
    fh: TextIO = open(target, "w") if own else target
    try:
        fh.write(MODEL_HEADER + "\n")
        fh.write("states: " + " ".join(model.states.labels) + "\n")
        fh.write("actions: " + " ".join(model.actions.labels) + "\n")
        fh.write("observations: " + " ".join(model.observations.labels) + "\n")
        fh.write(f"omega: {model.omega!r}\n")
        for a, gen in enumerate(model.generators):
            fh.write(f"generator {model.actions.label(a)}:\n")
            for row in gen.rates:
                fh.write(_fmt_row(row) + "\n")
        if model.per_action_emission:
            for a in range(model.n_actions):
                fh.write(f"emission {model.actions.label(a)}:\n")
                for row in model.emission[a]:
                    fh.write(_fmt_row(row) + "\n")
        else:
            fh.write("emission:\n")
            for row in model.emission:
                fh.write(_fmt_row(row) + "\n")
        if model.structural_masks is not None:
            for a, mask in enumerate(model.structural_masks):
                fh.write(f"mask {model.actions.label(a)}:\n")
                for row in mask:
                    fh.write(" ".join("1" if x else "0" for x in row) + "\n")
        for key, value in (metadata or {}).items():
            fh.write(f"meta {key}: {value}\n")
        fh.write("end\n")
    finally:
        if own:
            fh.close()


def load_model(source: str | TextIO) -> tuple[SwitchingSMJP, dict[str, str]]:
    """Parse a model document written by :func:`save_model`."""
    own = isinstance(source, str)
    fh: TextIO = open(source, "r") if own else source
    try:
        lines = [ln.rstrip("\n") for ln in fh]
    finally:
        if own:
            fh.close()
    if not lines or lines[0] != MODEL_HEADER:
        raise ModelFormatError(f"expected {MODEL_HEADER!r} on the first line")

    def grab(prefix: str, line: str) -> str:
        if not line.startswith(prefix):
            raise ModelFormatError(f"expected {prefix!r}, got {line!r}")
        return line[len(prefix):].strip()

    try:
        states = Alphabet("state", tuple(grab("states:", lines[1]).split()))
        actions = Alphabet("action", tuple(grab("actions:", lines[2]).split()))
        observations = Alphabet("observation", tuple(grab("observations:", lines[3]).split()))
        omega = float(grab("omega:", lines[4]))
    except (IndexError, ValueError, SmjpError) as exc:
        raise ModelFormatError(f"bad model header: {exc}") from None
    n, k, o = len(states), len(actions), len(observations)

    pos = 5

    def read_matrix(rows: int, cols: int) -> np.ndarray:
        nonlocal pos
        out = np.empty((rows, cols))
        for r in range(rows):
            parts = lines[pos].split()
            if len(parts) != cols:
                raise ModelFormatError(f"expected {cols} columns at line {pos + 1}")
            out[r] = [float(x) for x in parts]
            pos += 1
        return out

    try:
        gens = []
        for a in range(k):
            grab(f"generator {actions.label(a)}:", lines[pos])
            pos += 1
            gens.append(GeneratorMatrix(read_matrix(n, n)))
        if lines[pos] == "emission:":
            pos += 1
            emission = read_matrix(n, o)
        else:
            blocks = []
            for a in range(k):
                grab(f"emission {actions.label(a)}:", lines[pos])
                pos += 1
                blocks.append(read_matrix(n, o))
            emission = np.stack(blocks)
        masks = None
        if pos < len(lines) and lines[pos].startswith("mask "):
            blocks = []
            for a in range(k):
                grab(f"mask {actions.label(a)}:", lines[pos])
                pos += 1
                blocks.append(read_matrix(n, n).astype(bool))
            masks = tuple(blocks)
        metadata: dict[str, str] = {}
        while pos < len(lines) and lines[pos].startswith("meta "):
            body = lines[pos][len("meta "):]
            if ":" not in body:
                raise ModelFormatError(f"bad metadata at line {pos + 1}")
            key, value = body.split(":", 1)
            metadata[key.strip()] = value.strip()
            pos += 1
        if pos >= len(lines) or lines[pos] != "end":
            raise ModelFormatError("missing 'end' terminator")
    except (IndexError, ValueError) as exc:
        raise ModelFormatError(f"truncated or malformed model document: {exc}") from None
    model = SwitchingSMJP(
        states=states,
        actions=actions,
        observations=observations,
        generators=tuple(gens),
        emission=emission,
        omega=omega,
        structural_masks=masks,
    )
    return model, metadata


def model_text(model: SwitchingSMJP, metadata: dict[str, str] | None = None) -> str:
    buf = io.StringIO()
    save_model(model, buf, metadata)
    return buf.getvalue()
