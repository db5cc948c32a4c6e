"""Backward recursion, thresholds, count policy, and the grid oracle."""

import numpy as np
import pytest

from mmrelay.belief import ChannelModel, ack_likelihood, update
from mmrelay.envelope import Envelope, Line
from mmrelay.solver import (
    Action,
    CostModel,
    StationaryPolicy,
    bellman_backup,
    counts,
    decide,
    extract_thresholds,
    grid_dp_oracle,
    solve_horizon,
    stationary_policy,
    terminal_value,
)

MODEL = ChannelModel(0.8, 0.2, 0.9, 0.3)
COST = CostModel(reject_good=10.0, accept_bad=10.0, probe=1.0)


def random_case(rng):
    s = rng.uniform(0.05, 0.85)
    q = rng.uniform(s + 0.05, 0.97)
    g = rng.uniform(0.05, 0.85)
    k = rng.uniform(g + 0.05, 0.97)
    d1, d2 = rng.uniform(0.5, 20.0, 2)
    peak = d1 * d2 / (d1 + d2)
    probe = rng.uniform(0.01, 0.5) * peak
    return ChannelModel(q, s, k, g), CostModel(d1, d2, probe)


class TestCostModel:
    def test_validation(self):
        with pytest.raises(ValueError):
            CostModel(0.0, 1.0, 0.1)
        with pytest.raises(ValueError):
            CostModel(1.0, 1.0, -0.1)

    def test_flags_degenerate_probe_cost(self):
        with pytest.warns(UserWarning):
            CostModel(1.0, 1.0, 0.6)  # peak is 0.5

    def test_derived_points(self):
        c = CostModel(2.0, 1.0, 0.1)
        assert c.indifference == pytest.approx(1.0 / 3.0, abs=1e-12)
        assert c.peak == pytest.approx(2.0 / 3.0, abs=1e-12)


class TestTerminalValue:
    def test_symmetric(self):
        c = CostModel(1.0, 1.0, 0.1)
        env = terminal_value(c)
        assert c.indifference == pytest.approx(0.5)
        assert env.evaluate(0.5) == pytest.approx(0.5, abs=1e-12)

    def test_asymmetric(self):
        c = CostModel(2.0, 1.0, 0.1)
        env = terminal_value(c)
        assert env.evaluate(c.indifference) == pytest.approx(c.peak, abs=1e-12)

    def test_boundary_zeros(self):
        env = terminal_value(COST)
        assert env.evaluate(0.0) == 0.0
        assert env.evaluate(1.0) == 0.0


class TestBellmanBackup:
    def test_hand_two_stage_values(self):
        cont, value = bellman_backup(terminal_value(COST), MODEL, COST)
        # Y=0.6, posteriors 0.75/0.125, stage costs 2.5/1.25
        assert cont.evaluate(0.5) == pytest.approx(3.0, abs=1e-12)
        assert value.evaluate(0.5) == pytest.approx(3.0, abs=1e-12)

    def test_expensive_probe_never_continues(self):
        with pytest.warns(UserWarning):
            cost = CostModel(10.0, 10.0, 5.0)  # probe == peak
        term = terminal_value(cost)
        _, value = bellman_backup(term, MODEL, cost)
        rs = np.linspace(0, 1, 500)
        assert np.max(np.abs(value.evaluate(rs) - term.evaluate(rs))) <= 1e-12

    def test_continuation_floor_is_probe_cost(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            model, cost = random_case(rng)
            cont, _ = bellman_backup(terminal_value(cost), model, cost)
            assert cont.evaluate(0.0) >= cost.probe - 1e-12
            assert cont.evaluate(1.0) >= cost.probe - 1e-12


class TestSolveHorizon:
    def test_single_stage(self):
        hp = solve_horizon(MODEL, COST, 1)
        rho = COST.indifference
        assert hp.horizon == 1
        assert hp.continuations == ()
        assert hp.reject_thresholds == (rho,)
        assert hp.accept_thresholds == (rho,)

    def test_invalid_horizon(self):
        with pytest.raises(ValueError):
            solve_horizon(MODEL, COST, 0)

    def test_two_stage_thresholds_bracket_indifference(self):
        hp = solve_horizon(MODEL, COST, 2)
        assert hp.reject_thresholds[0] < 0.5 < hp.accept_thresholds[0]
        assert hp.values[0].evaluate(0.5) == pytest.approx(3.0, abs=1e-12)

    def test_values_increase_with_stage(self):
        hp = solve_horizon(MODEL, COST, 5)
        rs = np.linspace(0, 1, 1000)
        for earlier, later in zip(hp.values, hp.values[1:]):
            assert np.all(earlier.evaluate(rs) <= later.evaluate(rs) + 1e-12)

    def test_action_regions(self):
        hp = solve_horizon(MODEL, COST, 4)
        assert hp.action(0, 0.01) is Action.REJECT
        assert hp.action(0, 0.99) is Action.ACCEPT
        assert hp.action(0, 0.5) is Action.CONTINUE
        assert hp.action(3, 0.49) is Action.REJECT


class TestExtractThresholds:
    def test_expensive_continuation_collapses(self):
        cost = CostModel(1.0, 1.0, 0.1)
        env = Envelope.from_lines([Line(0.6, 0.0)])  # above peak 0.5
        assert extract_thresholds(env, cost) == (0.5, 0.5)

    def test_constant_continuation(self):
        cost = CostModel(1.0, 1.0, 0.1)
        env = Envelope.from_lines([Line(0.4, 0.0)])
        alpha, beta = extract_thresholds(env, cost)
        assert alpha == pytest.approx(0.4, abs=1e-12)
        assert beta == pytest.approx(0.6, abs=1e-12)

    def test_thresholds_straddle_indifference(self):
        rng = np.random.default_rng(9)
        for _ in range(50):
            model, cost = random_case(rng)
            cont, _ = bellman_backup(terminal_value(cost), model, cost)
            alpha, beta = extract_thresholds(cont, cost)
            assert alpha <= cost.indifference + 1e-12
            assert beta >= cost.indifference - 1e-12


class TestStationaryPolicy:
    def test_degenerate_probe_converges_immediately(self):
        with pytest.warns(UserWarning):
            cost = CostModel(10.0, 10.0, 6.0)
        sp = stationary_policy(MODEL, cost, cap=4)
        assert sp.iterations == 1
        assert sp.converged
        assert sp.reject_below == pytest.approx(0.5)
        assert sp.accept_above == pytest.approx(0.5)

    def test_limits_bound_finite_horizon_thresholds(self):
        sp = stationary_policy(MODEL, COST, cap=8)
        assert sp.converged
        hp = solve_horizon(MODEL, COST, 50)
        assert sp.reject_below <= min(hp.reject_thresholds) + 1e-9
        assert sp.accept_above >= max(hp.accept_thresholds) - 1e-9

    def test_iteration_sequences_monotone(self):
        # horizon growth: reject threshold falls, accept threshold rises
        hp = solve_horizon(MODEL, COST, 30)
        alphas = hp.reject_thresholds
        betas = hp.accept_thresholds
        assert all(a <= b + 1e-12 for a, b in zip(alphas, alphas[1:]))
        assert all(a >= b - 1e-12 for a, b in zip(betas, betas[1:]))

    def test_parameter_validation(self):
        with pytest.raises(ValueError):
            stationary_policy(MODEL, COST, tol=0.0)
        with pytest.raises(ValueError):
            stationary_policy(MODEL, COST, max_iter=0)


class TestCounts:
    def test_hand_example(self):
        c, d = counts(MODEL, 0.5, 0.1, 0.8, cap=4)
        assert (c, d) == (2, 2)

    def test_unreachable_thresholds(self):
        c, d = counts(MODEL, 0.5, 0.0, 1.0, cap=10)
        assert c is None and d is None

    def test_prior_already_past_threshold(self):
        c, d = counts(MODEL, 0.05, 0.1, 0.8, cap=4)
        assert c == 0
        c, d = counts(MODEL, 0.9, 0.1, 0.8, cap=4)
        assert d == 0

    def test_threshold_order_validated(self):
        with pytest.raises(ValueError):
            counts(MODEL, 0.5, 0.8, 0.1, cap=4)


def make_policy(c, d, cap, alpha=0.1, beta=0.8, prior=0.5):
    return StationaryPolicy(
        reject_below=alpha,
        accept_above=beta,
        prior=prior,
        reject_run=c,
        accept_run=d,
        cap=cap,
        converged=True,
        iterations=1,
    )


class TestDecide:
    def test_reject_on_failure_run(self):
        pol = make_policy(2, 2, 4)
        out = decide(pol, success_run=0, failure_run=2, instants_used=2)
        assert out.action is Action.REJECT and not out.undecided

    def test_continue_short_run(self):
        pol = make_policy(2, 2, 4)
        out = decide(pol, success_run=1, failure_run=0, instants_used=1)
        assert out.action is Action.CONTINUE

    def test_no_decision_at_cap(self):
        pol = make_policy(3, 3, 2)
        out = decide(pol, success_run=1, failure_run=0, instants_used=2)
        assert out.action is Action.REJECT and out.undecided

    def test_accept_on_success_run(self):
        pol = make_policy(2, 3, 6)
        out = decide(pol, success_run=3, failure_run=0, instants_used=4)
        assert out.action is Action.ACCEPT and not out.undecided

    def test_none_counts_never_fire(self):
        pol = make_policy(None, None, 3)
        out = decide(pol, success_run=2, failure_run=0, instants_used=2)
        assert out.action is Action.CONTINUE
        out = decide(pol, success_run=3, failure_run=0, instants_used=3)
        assert out.action is Action.REJECT and out.undecided

    def test_two_trailing_runs_rejected(self):
        pol = make_policy(2, 2, 4)
        with pytest.raises(ValueError):
            decide(pol, success_run=1, failure_run=1, instants_used=2)


class TestGridOracle:
    def test_single_stage_is_exact(self):
        tables = grid_dp_oracle(MODEL, COST, 1, grid_points=101)
        r = tables.beliefs
        expected = np.minimum(r * 10.0, (1 - r) * 10.0)
        assert np.array_equal(tables.values[0], expected)

    def test_parameter_validation(self):
        with pytest.raises(ValueError):
            grid_dp_oracle(MODEL, COST, 1, grid_points=50)
        with pytest.raises(ValueError):
            grid_dp_oracle(MODEL, COST, 0)

    def test_matches_exact_solver(self):
        tables = grid_dp_oracle(MODEL, COST, 4, grid_points=10_001)
        hp = solve_horizon(MODEL, COST, 4)
        tol = 1e-4 * (COST.reject_good + COST.accept_bad)
        for m in range(4):
            exact = hp.values[m].evaluate(tables.beliefs)
            assert np.max(np.abs(exact - tables.values[m])) <= tol

    def test_action_agreement_away_from_thresholds(self):
        grid_points = 2001
        tables = grid_dp_oracle(MODEL, COST, 4, grid_points=grid_points)
        hp = solve_horizon(MODEL, COST, 4)
        step = 1.0 / (grid_points - 1)
        names = [Action.REJECT, Action.ACCEPT, Action.CONTINUE]
        for m in range(3):
            oracle_actions = tables.actions(m, COST)
            for i, r in enumerate(tables.beliefs):
                near = (
                    abs(r - hp.reject_thresholds[m]) <= step
                    or abs(r - hp.accept_thresholds[m]) <= step
                )
                if near:
                    continue
                assert names[oracle_actions[i]] is hp.action(m, r)


class TestStructuralProperties:
    def test_boundary_zeros_and_dominance(self):
        rng = np.random.default_rng(21)
        rs = np.linspace(0, 1, 500)
        for _ in range(25):
            model, cost = random_case(rng)
            hp = solve_horizon(model, cost, 6)
            stop = np.minimum(rs * cost.reject_good, (1 - rs) * cost.accept_bad)
            for env in hp.values:
                assert env.evaluate(0.0) == pytest.approx(0.0, abs=1e-12)
                assert env.evaluate(1.0) == pytest.approx(0.0, abs=1e-12)
                assert np.all(env.evaluate(rs) <= stop + 1e-12)
                assert np.all(env.evaluate(rs) <= cost.peak + 1e-12)

    def test_threshold_ordering_random(self):
        rng = np.random.default_rng(22)
        for _ in range(25):
            model, cost = random_case(rng)
            hp = solve_horizon(model, cost, 8)
            rho = cost.indifference
            assert hp.reject_thresholds[-1] == rho
            assert hp.accept_thresholds[-1] == rho
            for a, b in zip(hp.reject_thresholds, hp.reject_thresholds[1:]):
                assert a <= b + 1e-9
            for a, b in zip(hp.accept_thresholds, hp.accept_thresholds[1:]):
                assert a >= b - 1e-9


class TestCountThresholdAgreement:
    def test_trailing_run_tracking_matches_counts(self):
        # Belief tracking over the trailing run (reset at observation flips)
        # must agree with the count rule at every instant.
        sp = stationary_policy(MODEL, CostModel(60.0, 20.0, 0.1), prior=0.5, cap=4)
        assert sp.reject_run == 3 and sp.accept_run == 3
        rng = np.random.default_rng(77)
        for _ in range(10_000):
            seq = rng.random(sp.cap) < rng.uniform(0.2, 0.8)
            s_run = f_run = 0
            belief = sp.prior
            prev = None
            for t, ack in enumerate(seq):
                belief = update(MODEL, sp.prior if prev not in (None, ack) else belief, ack)
                prev = ack
                if ack:
                    s_run, f_run = s_run + 1, 0
                else:
                    s_run, f_run = 0, f_run + 1
                out = decide(sp, s_run, f_run, t + 1)
                if belief <= sp.reject_below:
                    assert out.action is Action.REJECT and not out.undecided
                elif belief >= sp.accept_above:
                    assert out.action is Action.ACCEPT
                elif t + 1 < sp.cap:
                    assert out.action is Action.CONTINUE
                if out.action is not Action.CONTINUE:
                    break

    def test_mixed_history_divergence_quantified(self):
        # Full-history belief tracking is not equivalent to run counting;
        # measure how often the decisions differ rather than pretending
        # they never do.
        sp = stationary_policy(MODEL, CostModel(60.0, 20.0, 0.1), prior=0.5, cap=4)
        rng = np.random.default_rng(78)
        diverged = total = 0
        for _ in range(10_000):
            seq = rng.random(sp.cap) < rng.uniform(0.2, 0.8)
            s_run = f_run = 0
            belief = sp.prior
            for t, ack in enumerate(seq):
                belief = update(MODEL, belief, ack)
                if ack:
                    s_run, f_run = s_run + 1, 0
                else:
                    s_run, f_run = 0, f_run + 1
                count_out = decide(sp, s_run, f_run, t + 1)
                if belief <= sp.reject_below:
                    belief_action = Action.REJECT
                elif belief >= sp.accept_above:
                    belief_action = Action.ACCEPT
                else:
                    belief_action = Action.CONTINUE
                total += 1
                diverged += belief_action is not count_out.action
                if count_out.action is not Action.CONTINUE:
                    break
        rate = diverged / total
        print(f"mixed-history divergence rate: {rate:.4f}")
        assert rate < 0.5
