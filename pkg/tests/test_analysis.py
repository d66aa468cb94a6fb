import itertools

import numpy as np
import pytest

from helpers import model_from_chains, random_model
from smjp.analysis import (
    DegenerateJoint,
    EmptyGraph,
    GridMisalignment,
    InvalidAction,
    TooFewEvents,
    cocluster,
    event_state_posterior,
    extract_subgraphs,
    information_loss,
    interval_stats,
    joint_operator,
    modularity,
    mutual_information,
    select_cocluster_sizes,
    state_correspondence,
)
from smjp.core import Alphabet, derive_rng
from smjp.events import EventSequence
from smjp.foraging import ToyConfig, generate_toy
from smjp.switching import FitConfig


class TestStateCorrespondence:
    def test_identical_one_hot_streams(self):
        rng = derive_rng(0)
        t, n = 40, 4
        states = rng.integers(0, n, size=t)
        onehot = np.zeros((t, n))
        onehot[np.arange(t), states] = 1.0
        corr = state_correspondence(onehot, onehot)
        assert np.allclose(corr.joint, np.diag(np.bincount(states, minlength=n) / t), atol=1e-15)
        live = corr.row_marginal > 0
        assert np.allclose(corr.conditional[live], np.eye(n)[live], atol=1e-12)

    def test_single_time_point_is_outer_product(self):
        g = np.array([[0.2, 0.8]])
        z = np.array([[0.5, 0.25, 0.25]])
        corr = state_correspondence(g, z)
        assert np.allclose(corr.joint, np.outer(g[0], z[0]), atol=1e-15)

    def test_independent_streams_factorize(self):
        rng = derive_rng(1)
        t = 20000
        a = rng.integers(0, 3, size=t)
        b = rng.integers(0, 4, size=t)
        ga = np.zeros((t, 3))
        ga[np.arange(t), a] = 1
        gb = np.zeros((t, 4))
        gb[np.arange(t), b] = 1
        corr = state_correspondence(ga, gb)
        expected = np.outer(corr.row_marginal, corr.col_marginal)
        sigma = np.sqrt(expected * (1 - expected) / t)
        assert np.all(np.abs(corr.joint - expected) < 3 * sigma + 1e-12)

    def test_marginals_match_time_averages(self):
        rng = derive_rng(2)
        t = 50
        g = rng.dirichlet(np.ones(3), size=t)
        z = rng.dirichlet(np.ones(5), size=t)
        corr = state_correspondence(g, z)
        assert np.abs(corr.row_marginal - g.mean(axis=0)).max() < 1e-10
        assert np.abs(corr.col_marginal - z.mean(axis=0)).max() < 1e-10
        assert corr.joint.sum() == pytest.approx(1.0, abs=1e-10)

    def test_misaligned_grids_rejected(self):
        with pytest.raises(GridMisalignment):
            state_correspondence(np.ones((3, 2)) / 2, np.ones((4, 2)) / 2)


def block_joint(sizes_rows, sizes_cols):
    """Uniform-mass block-diagonal joint with len(sizes) matching blocks."""
    total_r, total_c = sum(sizes_rows), sum(sizes_cols)
    joint = np.zeros((total_r, total_c))
    r0 = c0 = 0
    for br, bc in zip(sizes_rows, sizes_cols):
        joint[r0 : r0 + br, c0 : c0 + bc] = 1.0 / (len(sizes_rows) * br * bc)
        r0 += br
        c0 += bc
    return joint


def brute_force_loss(joint, k_rows, k_cols):
    """Global minimum information loss over all onto assignments."""
    ns, nz = joint.shape
    best = np.inf
    for rows in itertools.product(range(k_rows), repeat=ns):
        if len(set(rows)) != k_rows:
            continue
        for cols in itertools.product(range(k_cols), repeat=nz):
            if len(set(cols)) != k_cols:
                continue
            loss = information_loss(joint, np.array(rows), np.array(cols), k_rows, k_cols)
            best = min(best, loss)
    return best


class TestCocluster:
    def test_block_diagonal_recovered_exactly(self):
        for sizes in [(2, 2), (1, 3), (3, 2)]:
            joint = block_joint(sizes, sizes)
            result = cocluster(joint, 2, 2, seed=3)
            assert result.mutual_information_loss < 1e-10
            r0 = result.row_assignment[: sizes[0]]
            r1 = result.row_assignment[sizes[0] :]
            assert len(set(r0.tolist())) == 1 and len(set(r1.tolist())) == 1
            assert r0[0] != r1[0]

    def test_full_resolution_zero_loss(self):
        rng = derive_rng(4)
        joint = rng.dirichlet(np.ones(12)).reshape(3, 4)
        result = cocluster(joint, 3, 4, seed=0)
        assert result.mutual_information_loss < 1e-12

    def test_matches_brute_force_on_random_joints(self):
        rng = derive_rng(5)
        for _ in range(8):
            joint = rng.dirichlet(np.ones(16)).reshape(4, 4)
            result = cocluster(joint, 2, 2, seed=7, restarts=24)
            best = brute_force_loss(joint, 2, 2)
            assert result.mutual_information_loss == pytest.approx(best, abs=1e-10)

    def test_loss_equals_mi_difference_and_nonnegative(self):
        rng = derive_rng(6)
        joint = rng.dirichlet(np.ones(30)).reshape(5, 6)
        result = cocluster(joint, 3, 2, seed=1)
        direct = information_loss(joint, result.row_assignment, result.col_assignment, 3, 2)
        assert result.mutual_information_loss == pytest.approx(direct, abs=1e-10)
        assert result.mutual_information_loss >= 0

    def test_loss_trace_non_increasing(self):
        rng = derive_rng(7)
        joint = rng.dirichlet(np.ones(48)).reshape(6, 8)
        result = cocluster(joint, 3, 3, seed=2, restarts=4)
        assert np.diff(np.asarray(result.loss_trace)).max(initial=-np.inf) <= 1e-12

    def test_zero_mass_rows_pinned_deterministically(self):
        joint = block_joint((2, 2), (2, 2))
        joint = np.vstack([joint, np.zeros((1, 4))])
        r1 = cocluster(joint, 2, 2, seed=9)
        r2 = cocluster(joint, 2, 2, seed=9)
        assert np.array_equal(r1.row_assignment, r2.row_assignment)
        assert r1.row_assignment[-1] == 1  # pinned to the last cluster
        assert set(r1.row_assignment.tolist()) == {0, 1}
        assert r1.mutual_information_loss < 1e-10

    def test_degenerate_joint_rejected(self):
        with pytest.raises(DegenerateJoint):
            cocluster(np.zeros((3, 3)), 2, 2, seed=0)

    def test_accepts_correspondence_matrix_directly(self):
        rng = derive_rng(20)
        t = 30
        g = rng.dirichlet(np.ones(4), size=t)
        z = rng.dirichlet(np.ones(4), size=t)
        corr = state_correspondence(g, z)
        via_obj = cocluster(corr, 2, 2, seed=5)
        via_arr = cocluster(corr.joint, 2, 2, seed=5)
        assert via_obj.mutual_information_loss == pytest.approx(
            via_arr.mutual_information_loss, abs=1e-15
        )


class TestSelectCoclusterSizes:
    def test_identity_joint_elbow_at_full_size(self):
        joint = np.eye(5) / 5
        sel = select_cocluster_sizes(joint, range(2, 6), range(2, 6), seed=0)
        assert sel.chosen == (5, 5)

    def test_block_joint_elbow_at_block_count(self):
        joint = block_joint((2, 2, 2), (2, 2, 2))
        sel = select_cocluster_sizes(joint, range(2, 6), range(2, 6), seed=1)
        assert sel.chosen == (3, 3)

    def test_surface_monotone_non_increasing(self):
        rng = derive_rng(8)
        joint = rng.dirichlet(np.ones(30)).reshape(5, 6)
        sel = select_cocluster_sizes(joint, range(1, 6), range(1, 7), seed=2, restarts=30)
        assert np.all(np.diff(sel.loss_surface, axis=0) <= 1e-9)
        assert np.all(np.diff(sel.loss_surface, axis=1) <= 1e-9)


class TestJointOperator:
    def test_identity_chains_compose_to_identity(self):
        chains = np.stack([np.eye(3), np.eye(3)])
        model = model_from_chains(chains, np.full((3, 2), 0.5))
        op = joint_operator(model, 0, 1)
        assert np.array_equal(op.matrix.probs, np.eye(3))

    def test_permutations_compose(self):
        p1 = np.eye(4)[[1, 2, 3, 0]]
        p2 = np.eye(4)[[3, 2, 0, 1]]
        model = model_from_chains(np.stack([p1, p2]), np.full((4, 2), 0.5))
        op = joint_operator(model, 0, 1)
        assert np.array_equal(op.matrix.probs, p1 @ p2)

    def test_random_products_row_stochastic(self):
        rng = derive_rng(9)
        for _ in range(10):
            model = random_model(rng, 5, 3, 2)
            i, j = rng.integers(0, 3, size=2)
            op = joint_operator(model, int(i), int(j))
            assert np.abs(op.matrix.probs.sum(axis=1) - 1).max() < 1e-12

    def test_invalid_action(self):
        rng = derive_rng(10)
        model = random_model(rng, 2, 2, 2)
        with pytest.raises(InvalidAction):
            joint_operator(model, 0, 5)


def planted_operator(rng, n=10, internal=0.4, cross=0.02, concentration=2.0):
    """Row-stochastic matrix with two planted communities: each row keeps
    1 - internal - cross on the diagonal, spreads ``internal`` inside its
    community and ``cross`` outside. The Dirichlet concentration keeps the
    internal spread uneven but not so extreme that thresholding can
    disconnect a block (which would make the planted split non-optimal)."""
    half = n // 2
    w = np.zeros((n, n))
    for i in range(n):
        same = [j for j in range(n) if (j < half) == (i < half) and j != i]
        other = [j for j in range(n) if (j < half) != (i < half)]
        w[i, same] = internal * rng.dirichlet(np.full(len(same), concentration))
        w[i, other] = cross * rng.dirichlet(np.full(len(other), concentration))
        w[i, i] = 1.0 - internal - cross
    return w


class TestExtractSubgraphs:
    def test_two_block_operator_recovered(self):
        w = np.zeros((6, 6))
        w[:3, :3] = 1.0 / 3.0
        w[3:, 3:] = 1.0 / 3.0
        res = extract_subgraphs(w, threshold=0.05)
        assert len(res.communities) == 2
        assert set(res.communities[0]) == {0, 1, 2}
        assert set(res.communities[1]) == {3, 4, 5}
        assert len(res.persistent_subspaces) == 2

    def test_identity_operator_all_singleton_and_persistent(self):
        res = extract_subgraphs(np.eye(5), threshold=0.05)
        assert len(res.communities) == 5
        assert all(len(c) == 1 for c in res.communities)
        assert len(res.persistent_subspaces) == 5

    def test_planted_two_communities(self):
        rng = derive_rng(11)
        hits = 0
        for _ in range(20):
            w = planted_operator(rng)
            res = extract_subgraphs(w, threshold=0.05)
            labels = res.partition
            ok = len(res.communities) == 2 and len(set(labels[:5].tolist())) == 1 and len(set(labels[5:].tolist())) == 1
            hits += ok
        assert hits == 20

    def test_modularity_at_least_trivial(self):
        rng = derive_rng(12)
        for _ in range(10):
            model = random_model(rng, 6, 2, 2)
            op = joint_operator(model, 0, 1)
            res = extract_subgraphs(op, threshold=0.0)
            sym = (op.matrix.probs + op.matrix.probs.T) / 2
            np.fill_diagonal(sym, 0.0)
            trivial = modularity(sym, np.zeros(6, dtype=int))
            assert res.modularity >= trivial - 1e-12

    def test_empty_graph(self):
        with pytest.raises(EmptyGraph):
            extract_subgraphs(np.full((8, 8), 1.0 / 8.0), threshold=0.2)

    def test_threshold_validation(self):
        with pytest.raises(Exception):
            extract_subgraphs(np.eye(3), threshold=1.5)

    def test_attach_subgraphs_fills_operator_fields(self):
        from smjp.analysis import attach_subgraphs

        rng = derive_rng(21)
        model = random_model(rng, 4, 2, 2)
        op = joint_operator(model, 0, 1)
        assert op.subgraph_partition is None
        res = extract_subgraphs(op, threshold=0.0)
        filled = attach_subgraphs(op, res)
        assert np.array_equal(filled.subgraph_partition, res.partition)
        assert filled.persistent_subspaces == res.persistent_subspaces


def interval_sequence(intervals, label="press"):
    times = np.concatenate([[0.0], np.cumsum(intervals)])
    obs = Alphabet("observation", ("tick",))
    act = Alphabet("action", (label,))
    n = times.shape[0]
    return EventSequence("iv", times, np.zeros(n, dtype=np.int64), np.zeros(n, dtype=np.int64), obs, act)


class TestIntervalStats:
    def test_exponential_calibration(self):
        rng = derive_rng(13)
        seq = interval_sequence(rng.exponential(2.0, size=10_000))
        res = interval_stats(seq)
        assert res.ks_pvalue > 0.05
        assert res.exp_rate == pytest.approx(0.5, rel=0.05)
        assert res.hist_counts.sum() == res.n_intervals

    def test_constant_intervals_rejected_decisively(self):
        seq = interval_sequence(np.full(200, 3.0))
        res = interval_stats(seq)
        assert res.ks_pvalue < 1e-10

    def test_too_few_events(self):
        seq = interval_sequence(np.ones(5))
        with pytest.raises(TooFewEvents):
            interval_stats(seq)

    def test_symbol_filters(self):
        obs = Alphabet("observation", ("a", "b"))
        act = Alphabet("action", ("x", "y"))
        times = np.arange(80, dtype=np.float64)
        o = np.tile([0, 1], 40)
        a = np.tile([0, 0, 1, 1], 20)
        seq = EventSequence("f", times, o, a, obs, act)
        res = interval_stats(seq, observation="a")
        assert res.n_intervals == 39
        assert res.mean_interval == pytest.approx(2.0)
        res2 = interval_stats(seq, observation="a", action="x")
        assert res2.n_intervals == 19
        assert res2.mean_interval == pytest.approx(4.0)


class TestEventStatePosterior:
    def test_rows_are_distributions(self):
        toy = generate_toy(ToyConfig(expected_length=120), seed=3)
        cfg = FitConfig(seed=5, eval_grids=3)
        gamma = event_state_posterior(toy.model, toy.sequence, cfg)
        assert gamma.shape == (len(toy.sequence), toy.model.n_states)
        assert np.abs(gamma.sum(axis=1) - 1.0).max() < 1e-9
