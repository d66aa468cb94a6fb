"""Ground-truth data generation: a two-box foraging world, a near-optimal
planner on discretized beliefs, and a small switching-chain toy generator.

The world has two feeding boxes whose rewards arm after independent
exponential waits. The planner tracks one availability belief per box,
plans on a grid of belief bins (belief MDP solved by value iteration) and
acts on a fixed decision tick. The simulator replays the same belief
arithmetic against the true hidden box states and records an event stream
plus the ground-truth agent state at every decision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .core import Alphabet, SmjpError, as_rng, index_alphabet
from .events import EventSequence
from .switching import SwitchingSMJP, update_generator

ACTION_LABELS = ("stay", "press-1", "press-2", "move")
OBSERVATION_LABELS = ("box-1", "box-2", "reward", "no-reward")

A_STAY, A_PRESS_1, A_PRESS_2, A_MOVE = range(4)


class InvalidConfig(SmjpError):
    """A world/planner configuration value is out of range."""


class InvalidProbability(SmjpError):
    """A belief must lie in [0, 1]."""


class NonConvergence(SmjpError):
    """Value iteration hit its sweep cap; the discount must be < 1."""


@dataclass(frozen=True)
class WorldConfig:
    """Two-box world parameters.

    ``box_means`` are the exponential arming means in seconds. Costs and
    the reward magnitude are in reward units; the defaults make the
    optimal policy genuinely belief-dependent (it neither presses always
    nor camps at one box), which ``policy_is_nontrivial`` verifies.
    """

    box_means: tuple[float, float] = (10.0, 30.0)
    press_cost: float = 0.1
    switch_cost: float = 0.5
    reward_value: float = 1.0
    travel_time: float = 2.0
    decision_tick: float = 0.5
    discount: float = 0.99

    def __post_init__(self):
        if len(self.box_means) != 2 or min(self.box_means) <= 0:
            raise InvalidConfig("box means must be two positive durations")
        if self.press_cost < 0 or self.switch_cost < 0:
            raise InvalidConfig("costs must be non-negative")
        if self.reward_value <= 0:
            raise InvalidConfig("reward value must be positive")
        if self.travel_time <= 0 or self.decision_tick <= 0:
            raise InvalidConfig("travel time and decision tick must be positive")
        if not 0 < self.discount < 1:
            raise InvalidConfig("discount must be in (0, 1)")


def belief_update(belief: float, pressed: bool, rewarded: bool, mean_interval: float, dt: float) -> float:
    """Advance one box's availability belief across a step of length dt.

    Without a press the belief accrues along the exponential arming hazard,
    ``b + (1-b)(1 - exp(-dt/mean))``. A rewarded press resets the box, so
    the belief is exactly zero afterwards; an unrewarded press reveals the
    box was empty, so the belief restarts from zero and accrues over dt.
    """
    if not 0.0 <= belief <= 1.0 or not np.isfinite(belief):
        raise InvalidProbability(f"belief {belief!r} outside [0, 1]")
    if dt < 0:
        raise InvalidConfig(f"dt must be non-negative, got {dt!r}")
    if mean_interval <= 0:
        raise InvalidConfig(f"mean interval must be positive, got {mean_interval!r}")
    accrual = 1.0 - math.exp(-dt / mean_interval)
    if not pressed:
        return belief + (1.0 - belief) * accrual
    if rewarded:
        return 0.0
    return accrual


@dataclass(frozen=True)
class BeliefMDP:
    """Discretized belief planner: states are (location, bin, bin) triples.

    ``transition[a]`` is the row-stochastic kernel for action a, ``reward``
    the expected immediate reward per (state, action). Steps have unequal
    durations (a move takes ``travel_time``), so each action carries its
    own discount ``discount ** (duration / decision_tick)``; otherwise
    bouncing between boxes would fast-forward belief accrual for free.
    ``values`` and ``policy`` are filled once it has been solved.
    """

    world: WorldConfig
    m_bins: int
    diffusion_eps: float
    belief_bins: np.ndarray
    transition: np.ndarray
    reward: np.ndarray
    step_discounts: np.ndarray
    values: np.ndarray | None = None
    policy: np.ndarray | None = None

    @property
    def n_states(self) -> int:
        return 2 * self.m_bins * self.m_bins

    @property
    def n_actions(self) -> int:
        return len(ACTION_LABELS)

    def state_index(self, location: int, bin0: int, bin1: int) -> int:
        return (location * self.m_bins + bin0) * self.m_bins + bin1

    def state_parts(self, index: int) -> tuple[int, int, int]:
        bin1 = index % self.m_bins
        rest = index // self.m_bins
        return rest // self.m_bins, rest % self.m_bins, bin1

    def belief_bin(self, belief: float) -> int:
        return int(round(belief * (self.m_bins - 1)))


def _bin_kernel(target_bin: int, m: int, eps: float) -> np.ndarray:
    """Distribution over bins: target keeps 1-eps, eps/2 leaks to each
    neighbor, folding back at the edges."""
    vec = np.zeros(m)
    vec[target_bin] += 1.0 - eps
    vec[max(target_bin - 1, 0)] += eps / 2.0
    vec[min(target_bin + 1, m - 1)] += eps / 2.0
    return vec


def build_belief_mdp(world: WorldConfig, m_bins: int = 10, diffusion_eps: float = 0.05) -> BeliefMDP:
    """Assemble kernels and rewards on the belief grid.

    Belief updates are mapped to the nearest bin and ``diffusion_eps``
    probability leaks to adjacent bins; pressing branches on whether the
    box pays out, with the payout probability read off the bin center.
    """
    if m_bins < 2:
        raise InvalidConfig("need at least 2 belief bins")
    if not 0.0 <= diffusion_eps <= 0.2:
        raise InvalidConfig("diffusion must be in [0, 0.2]")
    bins = np.linspace(0.0, 1.0, m_bins)
    n_states = 2 * m_bins * m_bins
    trans = np.zeros((len(ACTION_LABELS), n_states, n_states))
    reward = np.zeros((n_states, len(ACTION_LABELS)))
    tick, travel = world.decision_tick, world.travel_time
    means = world.box_means

    def nearest(b: float) -> int:
        return int(round(b * (m_bins - 1)))

    def add_outcome(row: np.ndarray, prob: float, loc: int, b0: float, b1: float):
        k0 = _bin_kernel(nearest(b0), m_bins, diffusion_eps)
        k1 = _bin_kernel(nearest(b1), m_bins, diffusion_eps)
        block = prob * np.outer(k0, k1).ravel()
        base = loc * m_bins * m_bins
        row[base : base + m_bins * m_bins] += block

    for loc in range(2):
        for i0 in range(m_bins):
            for i1 in range(m_bins):
                s = (loc * m_bins + i0) * m_bins + i1
                b = (bins[i0], bins[i1])
                # stay: both boxes accrue over one tick
                accrued = (
                    belief_update(b[0], False, False, means[0], tick),
                    belief_update(b[1], False, False, means[1], tick),
                )
                add_outcome(trans[A_STAY, s], 1.0, loc, *accrued)
                # move: accrue over the travel time, location flips
                moved = (
                    belief_update(b[0], False, False, means[0], travel),
                    belief_update(b[1], False, False, means[1], travel),
                )
                add_outcome(trans[A_MOVE, s], 1.0, 1 - loc, *moved)
                reward[s, A_MOVE] = -world.switch_cost
                # presses: only the lever at the current location can pay out
                for a, box in ((A_PRESS_1, 0), (A_PRESS_2, 1)):
                    if box != loc:
                        add_outcome(trans[a, s], 1.0, loc, *accrued)
                        reward[s, a] = -world.press_cost
                        continue
                    p_hit = b[box]
                    hit = list(accrued)
                    hit[box] = belief_update(b[box], True, True, means[box], tick)
                    miss = list(accrued)
                    miss[box] = belief_update(b[box], True, False, means[box], tick)
                    if p_hit > 0:
                        add_outcome(trans[a, s], p_hit, loc, *hit)
                    add_outcome(trans[a, s], 1.0 - p_hit, loc, *miss)
                    reward[s, a] = world.reward_value * p_hit - world.press_cost
    durations = np.array([tick, tick, tick, travel])
    return BeliefMDP(
        world=world,
        m_bins=m_bins,
        diffusion_eps=diffusion_eps,
        belief_bins=bins,
        transition=trans,
        reward=reward,
        step_discounts=world.discount ** (durations / tick),
    )


@dataclass(frozen=True)
class ValueIterationResult:
    values: np.ndarray
    policy: np.ndarray
    residuals: tuple[float, ...]
    sweeps: int


def value_iteration(mdp: BeliefMDP, tol: float = 1e-8, sweep_cap: int = 100_000) -> ValueIterationResult:
    """Iterate the Bellman optimality operator to a sup-norm residual
    below ``tol``; greedy policy ties break toward the lowest action index
    (stay before presses before move)."""
    values = np.zeros(mdp.n_states)
    residuals: list[float] = []
    for sweep in range(sweep_cap):
        q = mdp.reward.T + mdp.step_discounts[:, None] * (mdp.transition @ values)
        new_values = q.max(axis=0)
        resid = float(np.abs(new_values - values).max())
        residuals.append(resid)
        values = new_values
        if resid < tol:
            policy = q.argmax(axis=0)
            return ValueIterationResult(values, policy.astype(np.int64), tuple(residuals), sweep + 1)
    raise NonConvergence(f"no convergence after {sweep_cap} sweeps")


def solve_belief_mdp(world: WorldConfig, m_bins: int = 10, diffusion_eps: float = 0.05, tol: float = 1e-8) -> BeliefMDP:
    """Build and solve in one step; returns the planner with values and
    greedy policy attached."""
    mdp = build_belief_mdp(world, m_bins, diffusion_eps)
    result = value_iteration(mdp, tol)
    return replace(mdp, values=result.values, policy=result.policy)


def policy_is_nontrivial(mdp: BeliefMDP) -> bool:
    """Sanity check on a solved planner: it must press somewhere, decline
    to press at the same location somewhere else (belief dependence), and
    move somewhere."""
    if mdp.policy is None:
        raise SmjpError("planner has no policy; solve it first")
    pol = mdp.policy
    presses = np.zeros(2, dtype=bool)
    declines = np.zeros(2, dtype=bool)
    for s in range(mdp.n_states):
        loc, _, _ = mdp.state_parts(s)
        local_press = A_PRESS_1 if loc == 0 else A_PRESS_2
        if pol[s] == local_press:
            presses[loc] = True
        else:
            declines[loc] = True
    return bool(presses.any() and (presses & declines).any() and (pol == A_MOVE).any())


@dataclass(frozen=True)
class AgentTrace:
    """Ground-truth agent state at every decision: location, whether the
    decision paid out, and the belief bin of the occupied box, flattened
    into a single index z = (location*2 + rewarded)*m_bins + bin."""

    times: np.ndarray
    z: np.ndarray
    location: np.ndarray
    rewarded: np.ndarray
    belief_bin: np.ndarray
    beliefs: np.ndarray
    m_bins: int

    @property
    def n_z(self) -> int:
        return 2 * 2 * self.m_bins

    def one_hot(self) -> np.ndarray:
        out = np.zeros((self.z.shape[0], self.n_z))
        out[np.arange(self.z.shape[0]), self.z] = 1.0
        return out


def simulate_agent(
    mdp: BeliefMDP,
    horizon: float,
    seed: int | np.random.Generator,
    policy: np.ndarray | None = None,
    start_location: int = 0,
) -> tuple[EventSequence, AgentTrace]:
    """Run the world and a policy for ``horizon`` seconds.

    Box rewards arm after exponential waits and stay armed until collected.
    At each decision the policy is looked up at the binned belief state;
    presses reveal the true box state, everything else emits the current
    location symbol. Returns the observable event stream and the parallel
    ground-truth trace.
    """
    if horizon <= 0:
        raise InvalidConfig("horizon must be positive")
    if policy is None:
        if mdp.policy is None:
            raise SmjpError("planner has no policy; solve it or pass one explicitly")
        policy = mdp.policy
    policy = np.asarray(policy, dtype=np.int64)
    if policy.shape != (mdp.n_states,) or policy.min() < 0 or policy.max() >= mdp.n_actions:
        raise InvalidConfig("policy must map every planner state to a valid action")
    rng = as_rng(seed)
    world = mdp.world
    means = world.box_means
    obs_alpha = Alphabet("observation", OBSERVATION_LABELS)
    act_alpha = Alphabet("action", ACTION_LABELS)

    t = 0.0
    loc = int(start_location)
    beliefs = [0.0, 0.0]
    next_food = [rng.exponential(means[0]), rng.exponential(means[1])]

    times: list[float] = []
    obs_idx: list[int] = []
    act_idx: list[int] = []
    z_loc: list[int] = []
    z_rew: list[bool] = []
    z_bin: list[int] = []
    belief_log: list[tuple[float, float]] = []

    while t < horizon:
        bin0 = mdp.belief_bin(beliefs[0])
        bin1 = mdp.belief_bin(beliefs[1])
        a = int(policy[mdp.state_index(loc, bin0, bin1)])
        rewarded = False
        if a == A_STAY or a == A_MOVE:
            o = loc  # location symbol
            dt = world.decision_tick if a == A_STAY else world.travel_time
        else:
            box = 0 if a == A_PRESS_1 else 1
            dt = world.decision_tick
            if box == loc and t >= next_food[box]:
                rewarded = True
                next_food[box] = t + rng.exponential(means[box])
                o = obs_alpha.index("reward")
            else:
                o = obs_alpha.index("no-reward")
        times.append(t)
        obs_idx.append(o)
        act_idx.append(a)
        z_loc.append(loc)
        z_rew.append(rewarded)
        z_bin.append(bin0 if loc == 0 else bin1)
        belief_log.append((beliefs[0], beliefs[1]))
        for box in range(2):
            pressed_here = (a == A_PRESS_1 and box == 0) or (a == A_PRESS_2 and box == 1)
            pressed_here = pressed_here and box == loc
            beliefs[box] = belief_update(beliefs[box], pressed_here, rewarded if pressed_here else False, means[box], dt)
        t += dt
        if a == A_MOVE:
            loc = 1 - loc

    times_arr = np.asarray(times)
    seq = EventSequence(
        "foraging-agent",
        times_arr,
        np.asarray(obs_idx, dtype=np.int64),
        np.asarray(act_idx, dtype=np.int64),
        obs_alpha,
        act_alpha,
        {"horizon": repr(float(horizon))},
    )
    loc_arr = np.asarray(z_loc, dtype=np.int64)
    rew_arr = np.asarray(z_rew, dtype=bool)
    bin_arr = np.asarray(z_bin, dtype=np.int64)
    z = (loc_arr * 2 + rew_arr.astype(np.int64)) * mdp.m_bins + bin_arr
    trace = AgentTrace(
        times=times_arr,
        z=z,
        location=loc_arr,
        rewarded=rew_arr,
        belief_bin=bin_arr,
        beliefs=np.asarray(belief_log),
        m_bins=mdp.m_bins,
    )
    return seq, trace


@dataclass(frozen=True)
class ToyConfig:
    """Configuration for the small switching-chain generator.

    Every tick of a rate-``event_rate`` Poisson clock transitions the
    latent chain selected by the action in force, emits a symbol, and the
    next action index is the emitted observation index (mod n_actions).
    When no explicit matrices are given they are drawn once per seed from
    Dirichlet(concentration) rows.
    """

    n_states: int = 5
    n_observations: int = 2
    n_actions: int = 2
    expected_length: int = 5000
    event_rate: float = 1.0
    concentration: float = 0.5
    chains: tuple[np.ndarray, ...] | None = None
    emission: np.ndarray | None = None

    def __post_init__(self):
        if self.n_states < 1 or self.n_observations < 1 or self.n_actions < 1:
            raise InvalidConfig("alphabet sizes must be positive")
        if self.n_actions > self.n_observations:
            raise InvalidConfig("observation-driven actions need n_actions <= n_observations")
        if self.expected_length < 1:
            raise InvalidConfig("expected length must be at least 1")
        if self.event_rate <= 0 or self.concentration <= 0:
            raise InvalidConfig("event rate and concentration must be positive")


@dataclass(frozen=True)
class ToyData:
    sequence: EventSequence
    states: np.ndarray
    model: SwitchingSMJP
    config: ToyConfig


def generate_toy(config: ToyConfig, seed: int | np.random.Generator) -> ToyData:
    """Sample an event sequence from a known switching chain.

    The first action is uniform; afterwards the action recorded at each
    event is the one the emitted observation selects, which is exactly the
    action governing the step to the next event. The true model (chains
    scaled into generators at the tick rate) is returned alongside the
    latent state path.
    """
    rng = as_rng(seed)
    n, k, o = config.n_states, config.n_actions, config.n_observations
    if config.chains is not None:
        chains = np.stack([np.asarray(c, dtype=np.float64) for c in config.chains])
        if chains.shape != (k, n, n):
            raise InvalidConfig(f"need {k} chains of shape ({n}, {n})")
    else:
        chains = np.stack([rng.dirichlet(np.full(n, config.concentration), size=n) for _ in range(k)])
    if config.emission is not None:
        emission = np.asarray(config.emission, dtype=np.float64)
        if emission.shape != (n, o):
            raise InvalidConfig(f"emission must have shape ({n}, {o})")
    else:
        emission = rng.dirichlet(np.full(o, config.concentration), size=n)

    horizon = config.expected_length / config.event_rate
    gaps = rng.exponential(1.0 / config.event_rate, size=int(config.expected_length * 1.3) + 64)
    times = np.cumsum(gaps)
    while times.size and times[-1] < horizon:
        extra = rng.exponential(1.0 / config.event_rate, size=256)
        times = np.concatenate([times, times[-1] + np.cumsum(extra)])
    times = times[times < horizon]

    cum_chain = np.cumsum(chains, axis=2)
    cum_emit = np.cumsum(emission, axis=1)
    s = int(rng.integers(n))
    a = int(rng.integers(k))
    states = np.empty(times.size, dtype=np.int64)
    obs = np.empty(times.size, dtype=np.int64)
    acts = np.empty(times.size, dtype=np.int64)
    draws = rng.random((times.size, 2))
    for i in range(times.size):
        s = int(np.searchsorted(cum_chain[a, s], draws[i, 0], side="right"))
        oi = int(np.searchsorted(cum_emit[s], draws[i, 1], side="right"))
        a = oi % k
        states[i] = s
        obs[i] = oi
        acts[i] = a

    obs_alpha = index_alphabet("observation", o, "o")
    act_alpha = index_alphabet("action", k, "a")
    seq = EventSequence("toy", times, obs, acts, obs_alpha, act_alpha, {})
    gens = tuple(update_generator(chains[i], config.event_rate) for i in range(k))
    model = SwitchingSMJP(
        states=index_alphabet("state", n, "s"),
        actions=act_alpha,
        observations=obs_alpha,
        generators=gens,
        emission=emission,
        omega=config.event_rate,
    )
    return ToyData(sequence=seq, states=states, model=model, config=config)
