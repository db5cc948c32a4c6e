"""Episode engine, Monte Carlo aggregation and scenario configuration.

One episode delivers a fixed number of packets over the simulated world:
the base station assigns the strongest viable relay at every global
decision boundary, each packet slot attempts one packet on the current
relay, and a run of consecutive packet failures sends the device into
local exploration, where it picks the next relay either by the count-based
stopping policy or by the greedy RSS baseline.  Time is accounted exactly:
packet slots at the slot length, exploration probes at the instant length.

Episodes are independent and reproducible: run ``i`` of a scenario is
seeded with ``(base_seed, i)`` and aggregation folds results in episode
order, so the numbers do not depend on how many workers ran them.
"""

from __future__ import annotations

import csv
import io
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml

from .belief import ChannelModel, LinkState
from .simworld import (
    RadioParams,
    SlotClock,
    World,
    WorldParams,
    Zone,
    ack_sample,
    build_world,
    expected_rss_dbm,
    link_truth,
    sample_link,
    step_dynamics,
    viable_set,
)
from .solver import (
    Action,
    CostModel,
    StationaryPolicy,
    decide,
    solve_horizon,
    stationary_policy,
)

__all__ = [
    "AggregateStats",
    "EpisodeClock",
    "RunMetrics",
    "ScenarioConfig",
    "SweepResult",
    "emit_outputs",
    "load_config",
    "load_policy_document",
    "monte_carlo",
    "policy_document",
    "pomdp_select",
    "rss_baseline_select",
    "run_episode",
    "sweep",
    "write_policy_document",
]

POLICIES = ("pomdp", "rss")

# Convergence settings for the stationary threshold iteration.
STATIONARY_TOL = 1e-9
STATIONARY_MAX_ITER = 10_000

# Episodes that exceed this many packet slots per requested packet are
# declared stuck instead of spinning forever.
_SLOT_BUDGET_FACTOR = 200


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything one experiment needs, with §-style defaults baked in."""

    world: WorldParams = WorldParams()
    radio: RadioParams = RadioParams()
    channel: ChannelModel = ChannelModel(0.8, 0.2, 0.9, 0.3)
    # Defaults put the count policy at 3 successive failures to reject and
    # 3 successive successes to accept from the 0.5 prior.
    cost: CostModel = CostModel(reject_good=60.0, accept_bad=20.0, probe=0.1)
    clock: SlotClock = field(
        default_factory=lambda: SlotClock(slots_per_decision=25)
    )
    prior: float = 0.5
    packets: int = 100
    failure_trigger: int = 3
    runs: int = 1000
    base_seed: int = 12345
    policy: str = "pomdp"

    def __post_init__(self) -> None:
        if self.packets < 1 or self.runs < 1 or self.failure_trigger < 1:
            raise ValueError("packets, runs and failure_trigger must be >= 1")
        if not 0.0 <= self.prior <= 1.0:
            raise ValueError("prior must be in [0, 1]")
        if self.policy not in POLICIES:
            raise ValueError(f"policy must be one of {POLICIES}, got {self.policy!r}")

    def to_dict(self) -> dict:
        return {
            "world": {
                "region_m": self.world.region_m,
                "zone_m": self.world.zone_m,
                "n_static": self.world.n_static,
                "n_dynamic": self.world.n_dynamic,
                "source": list(self.world.source),
                "destination": list(self.world.destination),
                "p_block": self.world.p_block,
            },
            "radio": {
                "carrier_hz": self.radio.carrier_hz,
                "tx_power_dbm": self.radio.tx_power_dbm,
                "tx_gain_db": self.radio.tx_gain_db,
                "rx_gain_db": self.radio.rx_gain_db,
                "path_loss_exp": self.radio.path_loss_exp,
                "shadowing_db": self.radio.shadowing_db,
                "noise_dbm_hz": self.radio.noise_dbm_hz,
                "bandwidth_hz": self.radio.bandwidth_hz,
                "packet_bytes": self.radio.packet_bytes,
            },
            "channel": {
                "stay_good": self.channel.stay_good,
                "turn_good": self.channel.turn_good,
                "ack_good": self.channel.ack_good,
                "ack_bad": self.channel.ack_bad,
            },
            "cost": {
                "reject_good": self.cost.reject_good,
                "accept_bad": self.cost.accept_bad,
                "probe": self.cost.probe,
            },
            "clock": {
                "slot_s": self.clock.slot_s,
                "instant_s": self.clock.instant_s,
                "slots_per_decision": self.clock.slots_per_decision,
                "explore_cap": self.clock.explore_cap,
            },
            "prior": self.prior,
            "packets": self.packets,
            "failure_trigger": self.failure_trigger,
            "runs": self.runs,
            "base_seed": self.base_seed,
            "policy": self.policy,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        data = dict(data or {})
        kwargs = {}
        if "world" in data:
            w = dict(data.pop("world"))
            for key in ("source", "destination"):
                if key in w:
                    w[key] = tuple(int(v) for v in w[key])
            kwargs["world"] = WorldParams(**w)
        if "radio" in data:
            kwargs["radio"] = RadioParams(**data.pop("radio"))
        if "channel" in data:
            kwargs["channel"] = ChannelModel(**data.pop("channel"))
        if "cost" in data:
            kwargs["cost"] = CostModel(**data.pop("cost"))
        if "clock" in data:
            kwargs["clock"] = SlotClock(**data.pop("clock"))
        kwargs.update(data)
        return cls(**kwargs)


def load_config(path=None, overrides: dict | None = None) -> ScenarioConfig:
    """Config from an optional YAML file plus flat field overrides."""
    data: dict = {}
    if path is not None:
        with open(path) as fh:
            loaded = yaml.safe_load(fh)
        if loaded is not None:
            if not isinstance(loaded, dict):
                raise ValueError(f"{path}: config must be a mapping")
            data = loaded
    for key, value in (overrides or {}).items():
        if value is not None:
            data[key] = value
    return ScenarioConfig.from_dict(data)


@dataclass(frozen=True)
class RunMetrics:
    """Per-episode measurements.

    ``exploration_episodes`` counts per-candidate stopping problems for the
    count policy and exploration events (full scans) for the RSS baseline;
    no-decisions only ever arise from the count policy.
    """

    e2e_delay: float
    exploration_time_total: float
    exploration_episodes: int
    relay_switches: int
    no_decision_episodes: int
    packets_delivered: int


class EpisodeClock:
    """Owns the world, the slot clock and exact time bookkeeping.

    Packet slots and exploration instants advance obstacle dynamics at the
    same wall rate: one step per elapsed slot length, with exploration
    instants accumulated until they amount to a full slot.
    """

    def __init__(self, world: World, clock: SlotClock):
        self.world = world
        self.clock = clock
        self.data_slots = 0
        self.instants = 0
        self.ticks = 0  # monotone instant counter fed to link_truth
        self._accum = 0

    def tick_slot(self) -> None:
        self.data_slots += 1
        self.ticks += 1
        self.clock.advance_slot()
        step_dynamics(self.world)

    def tick_instant(self) -> None:
        self.instants += 1
        self.ticks += 1
        self.clock.advance_instant()
        self._accum += 1
        if self._accum >= self.clock.instants_per_slot:
            self._accum -= self.clock.instants_per_slot
            step_dynamics(self.world)

    def exploration_time(self) -> float:
        return self.instants * self.clock.instant_s


def _best_rss_zone(world: World, radio: RadioParams, candidates: Sequence[Zone]) -> Zone:
    """Strongest candidate by shadowing-free RSS, lowest zone index on ties.

    This is the base station's pick: it works from long-term channel state,
    so it is deterministic given the geometry and costs no probe time.
    """
    best = None
    best_key = None
    for zone in candidates:
        key = (-expected_rss_dbm(world, radio, zone), world.zone_index(zone))
        if best_key is None or key < best_key:
            best, best_key = zone, key
    assert best is not None
    return best


def _rss_scan(
    world: World,
    radio: RadioParams,
    model: ChannelModel,
    candidates: Sequence[Zone],
    clock: EpisodeClock,
) -> list[tuple[Zone, float]]:
    """One probe instant per candidate; candidates ordered by measured RSS
    descending, ties broken toward the lowest zone index.

    Link quality is only ever observed through probe ACKs: a probe whose
    ACK is lost reads the noise floor, while an acknowledged probe reports
    the link's signal strength, which for a false ACK off a blocked link is
    the stale piggybacked reading.  One probe therefore cannot tell a clear
    link from a blocked one that acknowledged spuriously, which is the
    greedy baseline's blind spot.
    """
    scored = []
    for zone in candidates:
        sample = sample_link(world, radio, zone, clock.ticks)
        ack = ack_sample(sample.truth, model, world.rng)
        clock.tick_instant()
        measured = sample.rss_dbm if ack else radio.noise_floor_dbm
        scored.append((-measured, world.zone_index(zone), zone, measured))
    scored.sort()
    return [(zone, measured) for _, _, zone, measured in scored]


def rss_baseline_select(
    candidates: Sequence[Zone],
    world: World,
    radio: RadioParams,
    model: ChannelModel,
    clock: EpisodeClock,
) -> tuple[Zone, int]:
    """Greedy baseline: measure every candidate once, take the strongest."""
    if not candidates:
        raise ValueError("candidates must be non-empty")
    before = clock.instants
    order = _rss_scan(world, radio, model, candidates, clock)
    return order[0][0], clock.instants - before


def pomdp_select(
    candidates: Sequence[Zone],
    policy: StationaryPolicy,
    world: World,
    model: ChannelModel,
    clock: EpisodeClock,
) -> tuple[Zone | None, int, int, int]:
    """Probe candidates in order under the count-based stopping rule.

    Returns ``(chosen, instants_spent, no_decisions, candidates_explored)``;
    ``chosen`` is ``None`` when every candidate was rejected or timed out.
    Each candidate consumes at most ``policy.cap`` instants.
    """
    if not candidates:
        raise ValueError("candidates must be non-empty")
    before = clock.instants
    no_decisions = 0
    for explored, zone in enumerate(candidates, start=1):
        success_run = failure_run = used = 0
        while True:
            outcome = decide(policy, success_run, failure_run, used)
            if outcome.action is Action.CONTINUE:
                truth = link_truth(world, zone, clock.ticks)
                ack = ack_sample(truth, model, world.rng)
                clock.tick_instant()
                used += 1
                if ack:
                    success_run += 1
                    failure_run = 0
                else:
                    failure_run += 1
                    success_run = 0
                continue
            if outcome.action is Action.ACCEPT:
                return zone, clock.instants - before, no_decisions, explored
            if outcome.undecided:
                no_decisions += 1
            break
    return None, clock.instants - before, no_decisions, len(candidates)


@lru_cache(maxsize=64)
def _solve_stationary(
    model: ChannelModel, cost: CostModel, prior: float, cap: int
) -> StationaryPolicy:
    return stationary_policy(
        model, cost, prior=prior, cap=cap, tol=STATIONARY_TOL, max_iter=STATIONARY_MAX_ITER
    )


def run_episode(
    config: ScenarioConfig, seed, policy: StationaryPolicy | None = None
) -> RunMetrics:
    """Deliver the configured packet count once; see the module docstring
    for the slot structure.  Deterministic given ``seed``."""
    world = build_world(config.world, seed)
    candidates_all = viable_set(world)
    if not candidates_all:
        raise ValueError("viable relay set is empty for this geometry")
    if config.policy == "pomdp" and policy is None:
        policy = _solve_stationary(
            config.channel, config.cost, config.prior, config.clock.explore_cap
        )

    clock = EpisodeClock(world, config.clock.fresh())
    delivered = failed = switches = 0
    explorations = no_decisions = 0
    relay: Zone | None = None
    failure_streak = 0
    slot_budget = max(10_000, _SLOT_BUDGET_FACTOR * config.packets)
    boundary = config.clock.slots_per_decision

    slot_index = 0
    while delivered < config.packets:
        if slot_index % boundary == 0:
            assigned = _best_rss_zone(world, config.radio, candidates_all)
            if relay is not None and assigned != relay:
                switches += 1
            relay = assigned
            failure_streak = 0
        truth = link_truth(world, relay, clock.ticks)
        if truth == LinkState.GOOD:
            delivered += 1
            failure_streak = 0
        else:
            failed += 1
            failure_streak += 1
        clock.tick_slot()
        slot_index += 1
        if slot_index > slot_budget:
            raise RuntimeError(
                f"episode stuck: {slot_index} slots for {delivered} of "
                f"{config.packets} packets"
            )

        if failure_streak >= config.failure_trigger and delivered < config.packets:
            failure_streak = 0
            candidates = [z for z in candidates_all if z != relay] or list(candidates_all)
            order = _rss_scan(world, config.radio, config.channel, candidates, clock)
            if config.policy == "rss":
                chosen = order[0][0]
                explorations += 1
            else:
                # Probing needs a beam-aligned signal: candidates whose scan
                # probe came back at the noise floor cannot be examined.
                floor = config.radio.noise_floor_dbm
                probeable = [zone for zone, measured in order if measured > floor]
                chosen = None
                if probeable:
                    chosen, _, nod, explored = pomdp_select(
                        probeable, policy, world, config.channel, clock
                    )
                    explorations += explored
                    no_decisions += nod
                if chosen is None:
                    chosen = order[0][0]  # pass decided nothing: best RSS
            if chosen != relay:
                switches += 1
            relay = chosen

    e2e = (delivered + failed) * config.clock.slot_s + clock.exploration_time()
    return RunMetrics(
        e2e_delay=e2e,
        exploration_time_total=clock.exploration_time(),
        exploration_episodes=explorations,
        relay_switches=switches,
        no_decision_episodes=no_decisions,
        packets_delivered=delivered,
    )


@dataclass(frozen=True)
class AggregateStats:
    """Per-run metric vectors for one scenario, in episode order."""

    runs: int
    e2e_delay: np.ndarray
    exploration_time_total: np.ndarray
    exploration_episodes: np.ndarray
    relay_switches: np.ndarray
    no_decision_episodes: np.ndarray
    packets_delivered: np.ndarray

    METRICS = (
        "e2e_delay",
        "exploration_time_total",
        "exploration_episodes",
        "relay_switches",
        "no_decision_episodes",
        "packets_delivered",
    )

    @classmethod
    def from_runs(cls, results: Sequence[RunMetrics]) -> "AggregateStats":
        return cls(
            runs=len(results),
            e2e_delay=np.array([m.e2e_delay for m in results]),
            exploration_time_total=np.array([m.exploration_time_total for m in results]),
            exploration_episodes=np.array([m.exploration_episodes for m in results]),
            relay_switches=np.array([m.relay_switches for m in results]),
            no_decision_episodes=np.array([m.no_decision_episodes for m in results]),
            packets_delivered=np.array([m.packets_delivered for m in results]),
        )

    def mean(self, metric: str) -> float:
        return float(np.mean(getattr(self, metric)))

    def std(self, metric: str) -> float:
        return float(np.std(getattr(self, metric)))

    @property
    def no_decision_pct(self) -> float:
        episodes = int(np.sum(self.exploration_episodes))
        if episodes == 0:
            return 0.0
        return 100.0 * float(np.sum(self.no_decision_episodes)) / episodes

    @property
    def exploration_share_pct(self) -> float:
        total = float(np.sum(self.e2e_delay))
        if total == 0.0:
            return 0.0
        return 100.0 * float(np.sum(self.exploration_time_total)) / total

    def no_decision_fraction_per_run(self) -> np.ndarray:
        """Per-run no-decision fraction, 0 where nothing was explored."""
        eps = self.exploration_episodes.astype(float)
        return np.divide(
            self.no_decision_episodes,
            eps,
            out=np.zeros_like(eps),
            where=eps > 0,
        )


def _episode_seed(base_seed: int, index: int) -> tuple[int, int]:
    return (base_seed, index)


def _run_indexed(args) -> RunMetrics:
    config, index = args
    return run_episode(config, _episode_seed(config.base_seed, index))


def monte_carlo(config: ScenarioConfig, workers: int = 1) -> AggregateStats:
    """Run the scenario ``config.runs`` times and fold the metrics in
    episode order; identical output for any worker count."""
    if config.runs < 1:
        raise ValueError("runs must be >= 1")
    if config.policy == "pomdp":
        _solve_stationary(
            config.channel, config.cost, config.prior, config.clock.explore_cap
        )
    tasks = [(config, i) for i in range(config.runs)]
    if workers <= 1 or config.runs == 1:
        results = [_run_indexed(t) for t in tasks]
    else:
        chunk = max(1, config.runs // (4 * workers))
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_indexed, tasks, chunksize=chunk))
    return AggregateStats.from_runs(results)


@dataclass(frozen=True)
class SweepResult:
    """Aggregate stats per (axis value, policy), in sweep order."""

    axis: str
    values: tuple
    policies: tuple[str, ...]
    stats: dict  # (value, policy) -> AggregateStats


def _with_axis(config: ScenarioConfig, axis: str, value) -> ScenarioConfig:
    if axis == "M":
        return replace(config, clock=replace(config.clock.fresh(), explore_cap=int(value)))
    if axis == "D":
        return replace(config, world=replace(config.world, n_dynamic=int(value)))
    raise ValueError(f"axis must be 'M' or 'D', got {axis!r}")


def sweep(
    config: ScenarioConfig,
    axis: str,
    values: Sequence,
    policies: Sequence[str] = POLICIES,
    workers: int = 1,
) -> SweepResult:
    """One Monte Carlo batch per axis value per policy."""
    if not values:
        raise ValueError("sweep values must be non-empty")
    for p in policies:
        if p not in POLICIES:
            raise ValueError(f"unknown policy {p!r}")
    stats = {}
    for value in values:
        for pol in policies:
            point = replace(_with_axis(config, axis, value), policy=pol)
            stats[(value, pol)] = monte_carlo(point, workers=workers)
    return SweepResult(axis=axis, values=tuple(values), policies=tuple(policies), stats=stats)


# --- output files -----------------------------------------------------------

_TABLE_COLUMNS = [
    "axis",
    "axis_value",
    "policy",
    "runs",
    "e2e_delay_mean_s",
    "e2e_delay_std_s",
    "exploration_time_mean_s",
    "exploration_time_std_s",
    "exploration_episodes_mean",
    "relay_switches_mean",
    "relay_switches_std",
    "no_decision_pct",
    "exploration_share_pct",
    "packets_delivered_mean",
]


def _table_row(axis: str, value, policy: str, stats: AggregateStats) -> list:
    return [
        axis,
        value,
        policy,
        stats.runs,
        stats.mean("e2e_delay"),
        stats.std("e2e_delay"),
        stats.mean("exploration_time_total"),
        stats.std("exploration_time_total"),
        stats.mean("exploration_episodes"),
        stats.mean("relay_switches"),
        stats.std("relay_switches"),
        stats.no_decision_pct,
        stats.exploration_share_pct,
        stats.mean("packets_delivered"),
    ]


def _render_rows(rows: list[list]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(_TABLE_COLUMNS)
    writer.writerows(rows)
    return buf.getvalue()


def emit_outputs(result: SweepResult | AggregateStats, destination, *, config=None) -> list[Path]:
    """Write the metrics table and a plain-text summary under ``destination``.

    Re-running with identical inputs rewrites byte-identical files.
    """
    dest = Path(destination)
    try:
        dest.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {dest}: {exc}") from exc

    if isinstance(result, AggregateStats):
        policy = config.policy if config is not None else "pomdp"
        rows = [_table_row("none", "", policy, result)]
        pairs = [("", policy, result)]
    else:
        rows = [
            _table_row(result.axis, value, pol, result.stats[(value, pol)])
            for value in result.values
            for pol in result.policies
        ]
        pairs = [
            (value, pol, result.stats[(value, pol)])
            for value in result.values
            for pol in result.policies
        ]

    table_path = dest / "metrics.csv"
    table_path.write_text(_render_rows(rows))

    lines = ["scenario metrics (mean over runs)", ""]
    for value, pol, stats in pairs:
        label = f"{pol:6s}" + (f" @ {value}" if value != "" else "")
        lines.append(
            f"{label}: e2e {stats.mean('e2e_delay'):.3f} s | "
            f"exploration {stats.mean('exploration_time_total') * 1e3:.2f} ms | "
            f"switches {stats.mean('relay_switches'):.2f} | "
            f"no-decision {stats.no_decision_pct:.2f} %"
        )
    summary_path = dest / "summary.txt"
    summary_path.write_text("\n".join(lines) + "\n")
    return [table_path, summary_path]


# --- policy documents -------------------------------------------------------


def policy_document(config: ScenarioConfig) -> dict:
    """Solve the configured model and package every policy artifact:
    the channel/cost inputs, per-stage thresholds for the configured cap,
    and the stationary thresholds with their run counts."""
    cap = config.clock.explore_cap
    horizon = solve_horizon(config.channel, config.cost, cap)
    stationary = _solve_stationary(config.channel, config.cost, config.prior, cap)
    return {
        "channel": config.to_dict()["channel"],
        "cost": config.to_dict()["cost"],
        "horizon": cap,
        "indifference": horizon.indifference,
        "stages": [
            {
                "reject_below": horizon.reject_thresholds[m],
                "accept_above": horizon.accept_thresholds[m],
            }
            for m in range(cap)
        ],
        "stationary": {
            "reject_below": stationary.reject_below,
            "accept_above": stationary.accept_above,
            "prior": stationary.prior,
            "reject_run": stationary.reject_run,
            "accept_run": stationary.accept_run,
            "cap": stationary.cap,
            "converged": stationary.converged,
            "iterations": stationary.iterations,
        },
    }


def write_policy_document(path, document: dict) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(document, fh, sort_keys=True)


def load_policy_document(path) -> StationaryPolicy:
    """Rehydrate the stationary policy from a solve document."""
    with open(path) as fh:
        doc = yaml.safe_load(fh)
    st = doc["stationary"]
    return StationaryPolicy(
        reject_below=float(st["reject_below"]),
        accept_above=float(st["accept_above"]),
        prior=float(st["prior"]),
        reject_run=None if st["reject_run"] is None else int(st["reject_run"]),
        accept_run=None if st["accept_run"] is None else int(st["accept_run"]),
        cap=int(st["cap"]),
        converged=bool(st["converged"]),
        iterations=int(st["iterations"]),
    )
