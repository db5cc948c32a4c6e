"""Exactness and invariants of the two-state ACK belief filter."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmrelay.belief import (
    ChannelModel,
    DegenerateEvidenceError,
    ack_likelihood,
    failure_trajectory,
    predict,
    success_trajectory,
    update,
)

MODEL = ChannelModel(stay_good=0.8, turn_good=0.2, ack_good=0.9, ack_bad=0.3)


def models(rng, n):
    """Random valid channels, parameters kept away from the unit edges."""
    out = []
    while len(out) < n:
        s, k_bad = rng.uniform(0.02, 0.9, 2)
        q = rng.uniform(s + 0.02, 0.98)
        k_good = rng.uniform(k_bad + 0.02, 0.98)
        out.append(ChannelModel(q, s, k_good, k_bad))
    return out


class TestChannelModel:
    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            ChannelModel(1.2, 0.2, 0.9, 0.3)
        with pytest.raises(ValueError):
            ChannelModel(0.8, -0.1, 0.9, 0.3)

    def test_rejects_inverted_orderings(self):
        with pytest.raises(ValueError):
            ChannelModel(0.2, 0.8, 0.9, 0.3)
        with pytest.raises(ValueError):
            ChannelModel(0.8, 0.2, 0.3, 0.9)

    def test_equality_is_allowed(self):
        # Uninformative dynamics/observations are legal degenerate cases;
        # the spec's own symmetry examples rely on them.
        ChannelModel(0.7, 0.7, 0.9, 0.3)
        ChannelModel(0.8, 0.2, 0.5, 0.5)


class TestPredict:
    def test_hand_value(self):
        assert predict(MODEL, 0.5) == pytest.approx(0.5, abs=1e-12)

    def test_state_independent_when_dynamics_flat(self):
        m = ChannelModel(0.7, 0.7, 0.9, 0.3)
        for r in (0.0, 0.31, 1.0):
            assert predict(m, r) == pytest.approx(0.7, abs=1e-12)

    def test_absorbing_good(self):
        m = ChannelModel(1.0, 0.0, 0.9, 0.3)
        assert predict(m, 1.0) == 1.0


class TestAckLikelihood:
    def test_hand_value(self):
        assert ack_likelihood(MODEL, 0.5) == pytest.approx(0.6, abs=1e-12)

    def test_uninformative_observation(self):
        m = ChannelModel(0.8, 0.2, 0.4, 0.4)
        for r in (0.0, 0.5, 1.0):
            assert ack_likelihood(m, r) == pytest.approx(0.4, abs=1e-12)

    def test_certain_good_prior(self):
        assert ack_likelihood(MODEL, 1.0) == pytest.approx(0.78, abs=1e-12)


class TestUpdate:
    def test_hand_values(self):
        # 0.45 / 0.60 and 0.05 / 0.40 respectively
        assert update(MODEL, 0.5, True) == pytest.approx(0.75, abs=1e-12)
        assert update(MODEL, 0.5, False) == pytest.approx(0.125, abs=1e-12)

    def test_perfect_observation_forces_certainty(self):
        m = ChannelModel(0.8, 0.2, 1.0, 0.0)
        for r in (0.0, 0.3, 1.0):
            assert update(m, r, True) == pytest.approx(1.0, abs=1e-12)

    def test_degenerate_evidence(self):
        # belief pinned on bad with no false ACKs: success is impossible
        m = ChannelModel(0.8, 0.0, 0.9, 0.0)
        with pytest.raises(DegenerateEvidenceError):
            update(m, 0.0, True)
        # certain good, perfect ACKs: failure is impossible
        m = ChannelModel(1.0, 0.2, 1.0, 0.3)
        with pytest.raises(DegenerateEvidenceError):
            update(m, 1.0, False)


class TestTrajectories:
    def test_failure_hand_values(self):
        traj = failure_trajectory(MODEL, 0.5, 2)
        assert traj[0] == pytest.approx(0.125, abs=1e-12)
        assert traj[1] == pytest.approx(0.0275 / 0.535, abs=1e-12)

    def test_success_hand_values(self):
        traj = success_trajectory(MODEL, 0.5, 2)
        assert traj[0] == pytest.approx(0.75, abs=1e-12)
        assert traj[1] == pytest.approx(0.585 / 0.690, abs=1e-12)

    def test_empty(self):
        assert failure_trajectory(MODEL, 0.5, 0).size == 0
        assert success_trajectory(MODEL, 0.5, 0).size == 0
        with pytest.raises(ValueError):
            failure_trajectory(MODEL, 0.5, -1)

    def test_flat_dynamics_give_constant_posterior(self):
        m = ChannelModel(0.6, 0.6, 0.9, 0.3)
        traj = failure_trajectory(m, 0.5, 3)
        assert np.allclose(traj, traj[0], atol=1e-12)

    def test_certainty_absorbing_under_success(self):
        m = ChannelModel(0.8, 0.2, 1.0, 0.0)
        traj = success_trajectory(m, 0.5, 3)
        assert np.allclose(traj, 1.0, atol=1e-12)

    def test_monotone_runs(self):
        rng = np.random.default_rng(42)
        for m in models(rng, 50):
            for r0 in rng.uniform(0.05, 0.95, 3):
                for traj_fn in (failure_trajectory, success_trajectory):
                    traj = traj_fn(m, r0, 6)
                    diffs = np.diff(np.concatenate([[r0], traj]))
                    if traj[0] < r0:
                        assert np.all(diffs < 1e-15)
                    elif traj[0] > r0:
                        assert np.all(diffs > -1e-15)


@st.composite
def channels(draw):
    s = draw(st.floats(0.02, 0.9))
    q = draw(st.floats(min(s + 0.02, 0.98), 0.98))
    g = draw(st.floats(0.02, 0.9))
    k = draw(st.floats(min(g + 0.02, 0.98), 0.98))
    return ChannelModel(q, s, k, g)


class TestInvariants:
    @settings(max_examples=100)
    @given(channels(), st.booleans())
    def test_update_monotone_in_prior(self, model, ack):
        grid = np.linspace(0.0, 1.0, 201)
        posts = [update(model, r, ack) for r in grid]
        assert all(b - a >= -1e-12 for a, b in zip(posts, posts[1:]))

    @settings(max_examples=100)
    @given(channels(), st.floats(0.01, 0.99))
    def test_evidence_ordering(self, model, r):
        if model.ack_good > model.ack_bad + 1e-9:
            assert update(model, r, True) > update(model, r, False)

    @settings(max_examples=200)
    @given(channels(), st.floats(0.0, 1.0))
    def test_total_probability(self, model, r):
        y = ack_likelihood(model, r)
        mixed = y * update(model, r, True) + (1.0 - y) * update(model, r, False)
        assert mixed == pytest.approx(predict(model, r), abs=1e-12)

    def test_outputs_in_unit_interval(self):
        rng = np.random.default_rng(7)
        for m in models(rng, 100):
            for r in rng.uniform(0.0, 1.0, 20):
                for value in (
                    predict(m, r),
                    ack_likelihood(m, r),
                    update(m, r, True),
                    update(m, r, False),
                ):
                    assert 0.0 <= value <= 1.0
