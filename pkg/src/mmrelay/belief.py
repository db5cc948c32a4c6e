"""Two-state link-quality belief filtering from binary ACK feedback.

A relay link is modeled as a hidden two-state Markov chain (good/bad).
The only evidence about it is the success or failure of probe-packet
acknowledgments, which are themselves unreliable in both states.  This
module implements the exact Bayesian filter for that chain, plus the
deterministic belief trajectories produced by unbroken runs of identical
observations, which is what the count-based stopping rule is built on.

All quantities live in ordinary probability space.  Horizons here are a
handful of probe instants and the ACK probabilities are bounded away from
0/1 in any realistic configuration, so log-space bookkeeping buys nothing;
genuinely impossible observations raise ``DegenerateEvidenceError`` instead
of silently producing NaNs.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np

__all__ = [
    "ChannelModel",
    "DegenerateEvidenceError",
    "LinkState",
    "ack_likelihood",
    "failure_trajectory",
    "predict",
    "success_trajectory",
    "update",
]


class DegenerateEvidenceError(ValueError):
    """The observed ACK outcome has probability zero under the model."""


class LinkState(IntEnum):
    """Hidden quality of a relay link at one instant."""

    BAD = 0
    GOOD = 1


def _check_unit(name: str, value: float) -> None:
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"{name} must be in [0, 1], got {value!r}")


@dataclass(frozen=True)
class ChannelModel:
    """Transition and observation probabilities of a relay link.

    Attributes:
        stay_good: P(good at t+1 | good at t).
        turn_good: P(good at t+1 | bad at t).
        ack_good:  P(ACK success | link good).
        ack_bad:   P(ACK success | link bad), i.e. a false ACK.

    Links are assumed stickier in the good state than the bad one
    (``stay_good >= turn_good``) and ACKs must not anti-correlate with
    quality (``ack_good >= ack_bad``); inputs violating either ordering are
    rejected because the threshold structure built on this filter breaks
    without them.  Equality is allowed and simply makes the corresponding
    signal uninformative.
    """

    stay_good: float
    turn_good: float
    ack_good: float
    ack_bad: float

    def __post_init__(self) -> None:
        for name in ("stay_good", "turn_good", "ack_good", "ack_bad"):
            _check_unit(name, getattr(self, name))
        if self.stay_good < self.turn_good:
            raise ValueError(
                "good state must be at least as sticky as bad: "
                f"stay_good={self.stay_good} < turn_good={self.turn_good}"
            )
        if self.ack_good < self.ack_bad:
            raise ValueError(
                "ACKs must not anti-correlate with link quality: "
                f"ack_good={self.ack_good} < ack_bad={self.ack_bad}"
            )


def predict(model: ChannelModel, belief: float) -> float:
    """One-step-ahead probability that the link is good.

    Pushes the current belief through the hidden-chain transition matrix.
    """
    _check_unit("belief", belief)
    return model.stay_good * belief + (1.0 - belief) * model.turn_good


def ack_likelihood(model: ChannelModel, belief: float) -> float:
    """Predictive probability of an ACK success given the current belief."""
    p = predict(model, belief)
    return p * model.ack_good + (1.0 - p) * model.ack_bad


def update(model: ChannelModel, belief: float, ack: bool) -> float:
    """Posterior probability of the good state after one ACK outcome.

    Applies the chain transition first, then conditions on the observation
    with Bayes' rule.

    Raises:
        DegenerateEvidenceError: the outcome has zero probability under the
            model (possible only at boundary parameter combinations, e.g.
            ``ack_good == ack_bad == 0`` with an ACK success).
    """
    p = predict(model, belief)
    if ack:
        num = p * model.ack_good
        den = num + (1.0 - p) * model.ack_bad
    else:
        num = p * (1.0 - model.ack_good)
        den = num + (1.0 - p) * (1.0 - model.ack_bad)
    if den <= 0.0:
        raise DegenerateEvidenceError(
            f"observation ack={ack} has zero probability at belief {belief!r}"
        )
    return num / den


def _run_trajectory(model: ChannelModel, prior: float, count: int, ack: bool) -> np.ndarray:
    if count < 0:
        raise ValueError(f"count must be >= 0, got {count}")
    out = np.empty(count)
    r = prior
    for j in range(count):
        r = update(model, r, ack)
        out[j] = r
    return out


def failure_trajectory(model: ChannelModel, prior: float, count: int) -> np.ndarray:
    """Beliefs after 1..count successive ACK failures starting from ``prior``."""
    return _run_trajectory(model, prior, count, ack=False)


def success_trajectory(model: ChannelModel, prior: float, count: int) -> np.ndarray:
    """Beliefs after 1..count successive ACK successes starting from ``prior``."""
    return _run_trajectory(model, prior, count, ack=True)
