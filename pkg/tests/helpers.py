"""Shared fixtures: small random models, random grids, and the exhaustive
path-enumeration oracle used to check the recursions."""

import itertools

import numpy as np

from smjp.core import index_alphabet
from smjp.ctmc import NO_OBSERVATION, TAG_EVENT, TAG_VIRTUAL, TimeGrid
from smjp.switching import SwitchingSMJP, update_generator


def random_model(rng, n_states, n_actions, n_observations, omega=None, concentration=1.0):
    chains = np.stack(
        [rng.dirichlet(np.full(n_states, concentration), size=n_states) for _ in range(n_actions)]
    )
    emission = rng.dirichlet(np.full(n_observations, concentration), size=n_states)
    if omega is None:
        omega = float(rng.uniform(0.5, 3.0))
    gens = tuple(update_generator(chains[a], omega) for a in range(n_actions))
    return SwitchingSMJP(
        states=index_alphabet("state", n_states, "s"),
        actions=index_alphabet("action", n_actions, "a"),
        observations=index_alphabet("observation", n_observations, "o"),
        generators=gens,
        emission=emission,
        omega=omega,
    )


def model_from_chains(chains, emission, omega=1.0, masks=None):
    chains = np.asarray(chains, dtype=np.float64)
    emission = np.asarray(emission, dtype=np.float64)
    k, n, _ = chains.shape
    gens = tuple(update_generator(chains[a], omega, None if masks is None else masks[a]) for a in range(k))
    return SwitchingSMJP(
        states=index_alphabet("state", n, "s"),
        actions=index_alphabet("action", k, "a"),
        observations=index_alphabet("observation", emission.shape[-1], "o"),
        generators=gens,
        emission=emission,
        omega=omega,
        structural_masks=None if masks is None else tuple(np.asarray(m, dtype=bool) for m in masks),
    )


def random_grid(rng, length, n_actions, n_observations, virtual_frac=0.3):
    times = np.cumsum(rng.exponential(1.0, size=length))
    tags = np.where(rng.random(length) < virtual_frac, TAG_VIRTUAL, TAG_EVENT).astype(np.int8)
    tags[0] = TAG_EVENT
    obs = rng.integers(0, n_observations, size=length)
    obs[tags == TAG_VIRTUAL] = NO_OBSERVATION
    actions = rng.integers(0, n_actions, size=length)
    return TimeGrid(times, tags, obs, actions)


def event_grid(obs_indices, action_indices):
    obs = np.asarray(obs_indices, dtype=np.int64)
    act = np.asarray(action_indices, dtype=np.int64)
    times = np.arange(1.0, obs.size + 1.0)
    tags = np.where(obs == NO_OBSERVATION, TAG_VIRTUAL, TAG_EVENT).astype(np.int8)
    return TimeGrid(times, tags, obs, act)


def emission_table(model, grid):
    t, n = len(grid), model.n_states
    e = np.ones((t, n))
    for i, o in enumerate(grid.observations):
        if o != NO_OBSERVATION:
            e[i] = model.emission[:, o]
    return e


def enumerate_paths(model, grid):
    """Exhaustive-sum oracle: likelihood, state marginals and pair
    marginals by brute force over all N**T latent paths."""
    e = emission_table(model, grid)
    chains = model.chain_stack
    t, n = e.shape
    total = 0.0
    gamma = np.zeros((t, n))
    xi = np.zeros((max(t - 1, 0), n, n))
    for path in itertools.product(range(n), repeat=t):
        w = e[0, path[0]] / n
        for i in range(t - 1):
            w *= chains[grid.actions[i], path[i], path[i + 1]] * e[i + 1, path[i + 1]]
        total += w
        for i, s in enumerate(path):
            gamma[i, s] += w
        for i in range(t - 1):
            xi[i, path[i], path[i + 1]] += w
    return np.log(total), gamma / total, xi / total
