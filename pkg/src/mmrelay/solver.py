"""Finite-horizon stopping policies for relay-link exploration.

Backward dynamic programming over the belief interval, done exactly on the
piecewise-linear envelopes from :mod:`mmrelay.envelope`.  Out of the stage
value functions come the per-stage decision thresholds, their stationary
(long-horizon) limits, and the equivalent rule that simply counts
successive ACK successes or failures.  ``grid_dp_oracle`` is a deliberately
independent brute-force check of the same recursion on a dense belief grid.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple

import numpy as np

from .belief import ChannelModel, failure_trajectory, success_trajectory
from .envelope import Envelope, Line, branch_transform, crossing, min_of

__all__ = [
    "Action",
    "CostModel",
    "Decision",
    "GridTables",
    "HorizonPolicy",
    "StationaryPolicy",
    "bellman_backup",
    "counts",
    "decide",
    "extract_thresholds",
    "grid_dp_oracle",
    "solve_horizon",
    "stationary_policy",
    "terminal_value",
]


class Action(Enum):
    """What to do with the candidate relay after the latest probe."""

    REJECT = "reject"
    ACCEPT = "accept"
    CONTINUE = "continue"


class Decision(NamedTuple):
    """An action plus the marker for running out of probe instants."""

    action: Action
    undecided: bool


@dataclass(frozen=True)
class CostModel:
    """Stopping and probing costs of the exploration problem.

    Attributes:
        reject_good: penalty for walking away from a link that was actually
            good (expected cost ``r * reject_good`` when stopping to reject).
        accept_bad: penalty for committing to a link that was actually bad
            (expected cost ``(1 - r) * accept_bad`` when stopping to accept).
        probe: cost of one further exploration instant.
    """

    reject_good: float
    accept_bad: float
    probe: float

    def __post_init__(self) -> None:
        for name in ("reject_good", "accept_bad", "probe"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be > 0, got {getattr(self, name)!r}")
        if self.probe >= self.peak:
            warnings.warn(
                "probe cost exceeds the worst stopping cost; continuing is "
                "never optimal and all thresholds collapse to the "
                "indifference point",
                stacklevel=2,
            )

    @property
    def indifference(self) -> float:
        """Belief at which both stopping costs are equal."""
        return self.accept_bad / (self.reject_good + self.accept_bad)

    @property
    def peak(self) -> float:
        """Maximum of the terminal value, attained at the indifference point."""
        return self.reject_good * self.accept_bad / (self.reject_good + self.accept_bad)

    @property
    def reject_line(self) -> Line:
        return Line(0.0, self.reject_good)

    @property
    def accept_line(self) -> Line:
        return Line(self.accept_bad, -self.accept_bad)


def terminal_value(cost: CostModel) -> Envelope:
    """Last-stage value: cheaper of the two stopping costs, a two-line tent."""
    return Envelope.from_lines([cost.reject_line, cost.accept_line])


def bellman_backup(
    next_value: Envelope, model: ChannelModel, cost: CostModel
) -> tuple[Envelope, Envelope]:
    """One stage of the backward recursion.

    Returns ``(continuation, value)``: the expected cost of probing once
    more and then acting optimally, and its minimum with the two stopping
    lines.
    """
    continuation = (
        branch_transform(next_value, model, True)
        + branch_transform(next_value, model, False)
    ).shift(cost.probe)
    value = min_of(terminal_value(cost), continuation)
    return continuation, value


def extract_thresholds(continuation: Envelope, cost: CostModel) -> tuple[float, float]:
    """Decision thresholds of one stage from its continuation envelope.

    The reject threshold is the leftmost belief where rejecting is exactly
    as cheap as continuing, searched below the indifference point; the
    accept threshold is the rightmost such belief for accepting, searched
    above it.  Splitting the search at the indifference point probes each
    stopping line only where it is the active stopping action.  When the
    continuation never beats stopping, both thresholds collapse to the
    indifference point.
    """
    rho = cost.indifference
    alpha = crossing(continuation, cost.reject_line, "leftmost", 0.0, rho)
    beta = crossing(continuation, cost.accept_line, "rightmost", rho, 1.0)
    if alpha is None or beta is None:
        return rho, rho
    return alpha, beta


@dataclass(frozen=True)
class HorizonPolicy:
    """Stage values and thresholds of the finite-horizon problem.

    ``values[m]`` is the optimal cost-to-go at stage ``m`` (0-based, the
    last stage is ``horizon - 1``); ``continuations[m]`` exists for every
    stage but the last, which has no room to continue.  At stage ``m`` the
    optimal action is reject below ``reject_thresholds[m]``, accept above
    ``accept_thresholds[m]``, continue in between.
    """

    model: ChannelModel
    cost: CostModel
    horizon: int
    values: tuple[Envelope, ...]
    continuations: tuple[Envelope, ...]
    reject_thresholds: tuple[float, ...]
    accept_thresholds: tuple[float, ...]

    @property
    def indifference(self) -> float:
        return self.cost.indifference

    def action(self, stage: int, belief: float) -> Action:
        if belief <= self.reject_thresholds[stage]:
            return Action.REJECT
        if belief >= self.accept_thresholds[stage]:
            return Action.ACCEPT
        return Action.CONTINUE


def solve_horizon(model: ChannelModel, cost: CostModel, horizon: int) -> HorizonPolicy:
    """Solve the full backward recursion for ``horizon`` probe instants."""
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")
    rho = cost.indifference
    values = [terminal_value(cost)]
    continuations: list[Envelope] = []
    thresholds: list[tuple[float, float]] = [(rho, rho)]
    for _ in range(horizon - 1):
        continuation, value = bellman_backup(values[-1], model, cost)
        values.append(value)
        continuations.append(continuation)
        thresholds.append(extract_thresholds(continuation, cost))
    values.reverse()
    continuations.reverse()
    thresholds.reverse()
    return HorizonPolicy(
        model=model,
        cost=cost,
        horizon=horizon,
        values=tuple(values),
        continuations=tuple(continuations),
        reject_thresholds=tuple(t[0] for t in thresholds),
        accept_thresholds=tuple(t[1] for t in thresholds),
    )


@dataclass(frozen=True)
class StationaryPolicy:
    """Long-horizon limit of the threshold policy plus its count form.

    ``reject_run`` (``accept_run``) is the number of successive ACK
    failures (successes) from the prior after which the belief is certain
    to have crossed the corresponding threshold; ``None`` means the
    trajectory never crosses it within ``cap`` instants.
    """

    reject_below: float
    accept_above: float
    prior: float
    reject_run: int | None
    accept_run: int | None
    cap: int
    converged: bool
    iterations: int


def counts(
    model: ChannelModel,
    prior: float,
    reject_below: float,
    accept_above: float,
    cap: int,
) -> tuple[int | None, int | None]:
    """Smallest run lengths whose pure-run beliefs cross each threshold.

    A count of 0 means the prior itself already sits at or past the
    threshold (reject or accept immediately); ``None`` means unreachable
    within ``cap``.
    """
    if reject_below > accept_above:
        raise ValueError("reject threshold must not exceed accept threshold")
    if prior <= reject_below:
        c: int | None = 0
    else:
        c = None
        for j, r in enumerate(failure_trajectory(model, prior, cap), start=1):
            if r <= reject_below:
                c = j
                break
    if prior >= accept_above:
        d: int | None = 0
    else:
        d = None
        for j, r in enumerate(success_trajectory(model, prior, cap), start=1):
            if r >= accept_above:
                d = j
                break
    return c, d


def stationary_policy(
    model: ChannelModel,
    cost: CostModel,
    prior: float = 0.5,
    cap: int = 4,
    tol: float = 1e-9,
    max_iter: int = 10_000,
) -> StationaryPolicy:
    """Iterate the backup until the thresholds stop moving.

    The threshold sequences are monotone and bounded as the horizon grows,
    so they converge; failure to reach ``tol`` within ``max_iter`` backups
    is reported through ``converged=False`` on the final iterate rather
    than raised, since it only ever means the tolerance is below floating
    point resolution for this model.
    """
    if tol <= 0.0:
        raise ValueError("tol must be > 0")
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    rho = cost.indifference
    value = terminal_value(cost)
    alpha_prev, beta_prev = rho, rho
    alpha, beta = rho, rho
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        continuation, value = bellman_backup(value, model, cost)
        alpha, beta = extract_thresholds(continuation, cost)
        if abs(alpha - alpha_prev) < tol and abs(beta - beta_prev) < tol:
            converged = True
            break
        alpha_prev, beta_prev = alpha, beta
    c, d = counts(model, prior, alpha, beta, cap)
    return StationaryPolicy(
        reject_below=alpha,
        accept_above=beta,
        prior=prior,
        reject_run=c,
        accept_run=d,
        cap=cap,
        converged=converged,
        iterations=iterations,
    )


def decide(
    policy: StationaryPolicy,
    success_run: int,
    failure_run: int,
    instants_used: int,
) -> Decision:
    """Count-based decision after the latest probe.

    Exactly one of the run lengths is the current trailing run (each
    observation resets the opposite counter).  Exhausting the instant cap
    without crossing either count rejects the candidate with the
    ``undecided`` marker set, so the caller can record a no-decision and
    move on.
    """
    if success_run < 0 or failure_run < 0 or instants_used < 0:
        raise ValueError("run lengths and instants_used must be >= 0")
    if success_run > 0 and failure_run > 0:
        raise ValueError("exactly one of the runs can be trailing")
    if policy.reject_run is not None and failure_run >= policy.reject_run:
        return Decision(Action.REJECT, False)
    if policy.accept_run is not None and success_run >= policy.accept_run:
        return Decision(Action.ACCEPT, False)
    if instants_used >= policy.cap:
        return Decision(Action.REJECT, True)
    return Decision(Action.CONTINUE, False)


@dataclass(frozen=True)
class GridTables:
    """Brute-force stage values sampled on a uniform belief grid."""

    beliefs: np.ndarray
    values: np.ndarray  # shape (horizon, grid_points)
    continuations: np.ndarray  # shape (horizon - 1, grid_points)

    def actions(self, stage: int, cost: CostModel) -> np.ndarray:
        """Greedy action index per grid point: 0 reject, 1 accept, 2 continue."""
        r = self.beliefs
        stacked = [r * cost.reject_good, (1.0 - r) * cost.accept_bad]
        if stage < self.values.shape[0] - 1:
            stacked.append(self.continuations[stage])
        return np.argmin(np.stack(stacked), axis=0)


def grid_dp_oracle(
    model: ChannelModel, cost: CostModel, horizon: int, grid_points: int = 10_001
) -> GridTables:
    """Independent check of the recursion: dense grid + linear interpolation.

    Shares no code with the envelope solver on purpose; posterior beliefs
    that fall between grid points are interpolated, which bounds the error
    by the grid step squared times the local curvature.
    """
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")
    if grid_points < 101:
        raise ValueError(f"grid_points must be >= 101, got {grid_points}")
    r = np.linspace(0.0, 1.0, grid_points)
    stop = np.minimum(r * cost.reject_good, (1.0 - r) * cost.accept_bad)

    p = model.stay_good * r + (1.0 - r) * model.turn_good
    like = p * model.ack_good + (1.0 - p) * model.ack_bad
    with np.errstate(divide="ignore", invalid="ignore"):
        post_succ = np.where(like > 0.0, p * model.ack_good / like, 0.0)
        post_fail = np.where(
            like < 1.0, p * (1.0 - model.ack_good) / (1.0 - like), 0.0
        )

    values = [stop]
    continuations = []
    for _ in range(horizon - 1):
        nxt = values[-1]
        cont = cost.probe + like * np.interp(post_succ, r, nxt) + (1.0 - like) * np.interp(
            post_fail, r, nxt
        )
        values.append(np.minimum(stop, cont))
        continuations.append(cont)
    values.reverse()
    continuations.reverse()
    return GridTables(
        beliefs=r,
        values=np.array(values),
        continuations=np.array(continuations).reshape(horizon - 1, grid_points),
    )
