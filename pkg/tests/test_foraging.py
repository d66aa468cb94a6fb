import numpy as np
import pytest
from scipy import stats as sp_stats

from smjp.ctmc import TAG_EVENT, TimeGrid
from smjp.foraging import (
    A_PRESS_1,
    A_PRESS_2,
    A_STAY,
    InvalidConfig,
    InvalidProbability,
    NonConvergence,
    ToyConfig,
    WorldConfig,
    belief_update,
    build_belief_mdp,
    generate_toy,
    policy_is_nontrivial,
    simulate_agent,
    solve_belief_mdp,
    value_iteration,
)
from smjp.switching import forward


class TestWorldConfig:
    def test_defaults_valid(self):
        WorldConfig()

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"box_means": (0.0, 10.0)},
            {"press_cost": -1.0},
            {"reward_value": 0.0},
            {"decision_tick": 0.0},
            {"discount": 1.0},
        ],
    )
    def test_bad_values_rejected(self, kwargs):
        with pytest.raises(InvalidConfig):
            WorldConfig(**kwargs)


class TestBeliefUpdate:
    def test_zero_dt_keeps_zero(self):
        assert belief_update(0.0, False, False, 10.0, 0.0) == 0.0

    def test_one_mean_reaches_exponential_cdf(self):
        out = belief_update(0.0, False, False, 10.0, 10.0)
        assert out == pytest.approx(1.0 - np.exp(-1.0), abs=1e-12)

    def test_rewarded_press_resets_to_zero(self):
        assert belief_update(0.9, True, True, 10.0, 0.5) == 0.0

    def test_unrewarded_press_restarts_accrual(self):
        out = belief_update(0.9, True, False, 10.0, 0.5)
        assert out == pytest.approx(1.0 - np.exp(-0.05), abs=1e-12)

    def test_monotone_in_dt_without_press(self):
        dts = np.linspace(0.0, 30.0, 50)
        vals = [belief_update(0.2, False, False, 10.0, dt) for dt in dts]
        assert np.all(np.diff(vals) > 0)
        assert all(0 <= v <= 1 for v in vals)

    def test_invalid_probability(self):
        with pytest.raises(InvalidProbability):
            belief_update(1.5, False, False, 10.0, 1.0)


class TestBuildBeliefMdp:
    def test_kernel_rows_stochastic(self):
        mdp = build_belief_mdp(WorldConfig(), m_bins=6, diffusion_eps=0.05)
        sums = mdp.transition.sum(axis=2)
        assert np.abs(sums - 1.0).max() < 1e-10

    def test_no_diffusion_two_bins_deterministic(self):
        mdp = build_belief_mdp(WorldConfig(), m_bins=2, diffusion_eps=0.0)
        assert np.allclose(mdp.transition.max(axis=2), 1.0, atol=1e-12)

    def test_press_reward_probability_is_bin_center(self):
        world = WorldConfig()
        mdp = build_belief_mdp(world, m_bins=10, diffusion_eps=0.05)
        for s in range(mdp.n_states):
            loc, b0, b1 = mdp.state_parts(s)
            local = A_PRESS_1 if loc == 0 else A_PRESS_2
            center = mdp.belief_bins[b0 if loc == 0 else b1]
            implied = (mdp.reward[s, local] + world.press_cost) / world.reward_value
            assert implied == pytest.approx(center, abs=1e-12)

    def test_bad_config(self):
        with pytest.raises(InvalidConfig):
            build_belief_mdp(WorldConfig(), m_bins=1)
        with pytest.raises(InvalidConfig):
            build_belief_mdp(WorldConfig(), m_bins=5, diffusion_eps=0.5)


class TestValueIteration:
    def test_zero_reward_gives_zero_values_and_stay(self):
        from dataclasses import replace

        mdp = build_belief_mdp(WorldConfig(), m_bins=4, diffusion_eps=0.0)
        zeroed = replace(mdp, reward=np.zeros_like(mdp.reward))
        result = value_iteration(zeroed, tol=1e-10)
        assert np.abs(result.values).max() == 0.0
        assert np.all(result.policy == A_STAY)

    def test_residual_below_tolerance(self):
        mdp = build_belief_mdp(WorldConfig(), m_bins=5)
        result = value_iteration(mdp, tol=1e-8)
        assert result.residuals[-1] < 1e-8

    def test_contraction_per_sweep(self):
        mdp = build_belief_mdp(WorldConfig(), m_bins=5)
        result = value_iteration(mdp, tol=1e-8)
        r = np.asarray(result.residuals)
        gamma = mdp.world.discount
        assert np.all(r[1:] <= gamma * r[:-1] + 1e-12)

    def test_zero_costs_press_whenever_belief_positive(self):
        # Needs the default diffusion: without it the binned belief can get
        # stuck below the first bin boundary and the planner works around
        # the trap instead of pressing.
        world = WorldConfig(press_cost=0.0, switch_cost=0.0)
        mdp = solve_belief_mdp(world, m_bins=10, diffusion_eps=0.05)
        for s in range(mdp.n_states):
            loc, b0, b1 = mdp.state_parts(s)
            local_bin = b0 if loc == 0 else b1
            local_press = A_PRESS_1 if loc == 0 else A_PRESS_2
            if local_bin > 0:
                assert mdp.policy[s] == local_press

    def test_sweep_cap_guard(self):
        mdp = build_belief_mdp(WorldConfig(), m_bins=4)
        with pytest.raises(NonConvergence):
            value_iteration(mdp, tol=1e-12, sweep_cap=3)

    def test_default_policy_nontrivial(self):
        mdp = solve_belief_mdp(WorldConfig())
        assert policy_is_nontrivial(mdp)

    def test_policy_structure_insensitive_to_halved_tick(self):
        # The decision cadence is a discretization knob: halving it must not
        # change the qualitative policy (lowest belief bin worth pressing).
        def press_thresholds(mdp):
            out = []
            for loc in range(2):
                press = A_PRESS_1 if loc == 0 else A_PRESS_2
                bins = [
                    (mdp.state_parts(s)[1] if loc == 0 else mdp.state_parts(s)[2])
                    for s in range(mdp.n_states)
                    if mdp.state_parts(s)[0] == loc and mdp.policy[s] == press
                ]
                out.append(min(bins))
            return out

        coarse = solve_belief_mdp(WorldConfig(decision_tick=0.5))
        fine = solve_belief_mdp(WorldConfig(decision_tick=0.25))
        assert policy_is_nontrivial(coarse) and policy_is_nontrivial(fine)
        for a, b in zip(press_thresholds(coarse), press_thresholds(fine)):
            assert abs(a - b) <= 1


class TestSimulateAgent:
    def test_always_stay_policy(self):
        mdp = build_belief_mdp(WorldConfig(), m_bins=4)
        policy = np.full(mdp.n_states, A_STAY, dtype=np.int64)
        seq, trace = simulate_agent(mdp, 100.0, seed=1, policy=policy)
        assert np.all(seq.actions == A_STAY)
        labels = {seq.observation_alphabet.label(int(o)) for o in seq.observations}
        assert labels == {"box-1"}
        assert trace.rewarded.sum() == 0

    def test_press_always_renewal_rate(self):
        # Pressing every tick at box 1 collects each reward at the first
        # tick after it arms: a renewal process with period mean + ~tick/2.
        world = WorldConfig(box_means=(10.0, 30.0), decision_tick=0.25)
        mdp = build_belief_mdp(world, m_bins=3)
        policy = np.full(mdp.n_states, A_PRESS_1, dtype=np.int64)
        horizon = 100_000.0
        seq, trace = simulate_agent(mdp, horizon, seed=11, policy=policy, start_location=0)
        rewards = int(trace.rewarded.sum())
        expected = horizon / world.box_means[0]
        assert abs(rewards - expected) < 3 * np.sqrt(expected)

    def test_rewards_only_from_local_presses(self):
        mdp = solve_belief_mdp(WorldConfig(), m_bins=6)
        seq, trace = simulate_agent(mdp, 3000.0, seed=3)
        reward_idx = seq.observation_alphabet.index("reward")
        for i in np.nonzero(seq.observations == reward_idx)[0]:
            a = int(seq.actions[i])
            assert a in (A_PRESS_1, A_PRESS_2)
            assert trace.location[i] == (0 if a == A_PRESS_1 else 1)
            assert trace.rewarded[i]

    def test_optimal_press_intervals_not_exponential(self):
        mdp = solve_belief_mdp(WorldConfig())
        seq, _ = simulate_agent(mdp, 15_000.0, seed=4)
        press = (seq.actions == A_PRESS_1) | (seq.actions == A_PRESS_2)
        intervals = np.diff(seq.times[press])
        assert intervals.size > 500
        ks = sp_stats.kstest(intervals, "expon", args=(0.0, intervals.mean()))
        assert ks.pvalue < 0.01

    def test_trace_indexing(self):
        mdp = solve_belief_mdp(WorldConfig(), m_bins=5)
        seq, trace = simulate_agent(mdp, 500.0, seed=6)
        assert trace.n_z == 2 * 2 * 5
        assert trace.z.min() >= 0 and trace.z.max() < trace.n_z
        oh = trace.one_hot()
        assert np.array_equal(oh.sum(axis=1), np.ones(len(seq)))


class TestGenerateToy:
    def test_single_action_reduces_to_plain_chain(self):
        toy = generate_toy(ToyConfig(n_actions=1, expected_length=300), seed=2)
        assert np.all(toy.sequence.actions == 0)
        assert toy.model.n_actions == 1

    def test_default_shape_and_length(self):
        toy = generate_toy(ToyConfig(), seed=9)
        assert toy.model.n_states == 5
        assert toy.model.n_observations == 2
        assert toy.model.n_actions == 2
        assert abs(len(toy.sequence) - 5000) < 3 * np.sqrt(5000)
        assert np.array_equal(toy.sequence.observations % 2, toy.sequence.actions)

    def test_transition_counts_recover_chains(self):
        toy = generate_toy(ToyConfig(expected_length=100_000), seed=14)
        chains = toy.model.chain_stack
        counts = np.zeros_like(chains)
        s, a = toy.states, toy.sequence.actions
        for i in range(len(s) - 1):
            counts[a[i], s[i], s[i + 1]] += 1
        for k in range(2):
            for i in range(5):
                row_n = counts[k, i].sum()
                if row_n < 50:
                    continue
                for j in range(5):
                    p = chains[k, i, j]
                    sigma = max(np.sqrt(row_n * p * (1 - p)), 1.0)
                    assert abs(counts[k, i, j] - row_n * p) < 3 * sigma

    def test_true_model_likelihood_matches_counted_entropy(self):
        # Per-symbol likelihood under the generating model vs the 4-symbol
        # context conditional entropy estimated by counting.
        toy = generate_toy(ToyConfig(expected_length=50_000), seed=5)
        seq = toy.sequence
        grid = TimeGrid(
            seq.times,
            np.full(len(seq), TAG_EVENT, dtype=np.int8),
            seq.observations,
            seq.actions,
        )
        _, ll = forward(toy.model, grid)
        per_symbol = -ll / len(seq)
        k = 5
        obs = seq.observations
        ctx = np.zeros(obs.size - k + 1, dtype=np.int64)
        for j in range(k):
            ctx = ctx * 2 + obs[j : obs.size - k + 1 + j]
        joint = np.bincount(ctx, minlength=2**k).astype(float)
        joint /= joint.sum()
        marg = joint.reshape(-1, 2).sum(axis=1)
        h_joint = -np.sum(joint[joint > 0] * np.log(joint[joint > 0]))
        h_marg = -np.sum(marg[marg > 0] * np.log(marg[marg > 0]))
        counted = h_joint - h_marg
        assert abs(per_symbol - counted) < 0.02 * counted

    def test_bad_configs(self):
        with pytest.raises(InvalidConfig):
            ToyConfig(n_actions=3, n_observations=2)
        with pytest.raises(InvalidConfig):
            ToyConfig(expected_length=0)
        with pytest.raises(InvalidConfig):
            generate_toy(ToyConfig(chains=(np.eye(3),), n_states=4, n_actions=1), seed=0)
