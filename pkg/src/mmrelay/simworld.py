"""Ground-truth grid world: zones, obstacles, radio model, ACK channel.

The service region is a square grid of zones with one source/destination
pair.  Static obstacles are points that permanently block any link whose
zone-center segment passes near them; dynamic obstacles live on the zone
grid, wander as a lazy random walk, and block a link probabilistically
whenever their current zone intersects its segment.  The hidden good/bad
state of a link is exactly this blockage outcome; the agent only ever sees
it through the lossy ACK channel of :mod:`mmrelay.belief`.

All randomness flows through one ``numpy`` generator per world, so a whole
episode replays bit-identically under the same seed and call order.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .belief import ChannelModel, LinkState

__all__ = [
    "InsufficientDataError",
    "LinkSample",
    "RadioParams",
    "SlotClock",
    "TraceRecord",
    "World",
    "WorldParams",
    "Zone",
    "ack_sample",
    "build_world",
    "calibrate",
    "collect_trace",
    "link_truth",
    "path_loss",
    "read_trace",
    "sample_link",
    "step_dynamics",
    "trace_pairs",
    "viable_set",
    "write_trace",
]

Zone = tuple[int, int]  # (col, row) grid coordinates

_LIGHT_SPEED = 299_792_458.0


class InsufficientDataError(ValueError):
    """Too few samples to estimate one of the channel probabilities."""


@dataclass(frozen=True)
class RadioParams:
    """Link-budget parameters of the mmWave D2D radio."""

    carrier_hz: float = 60e9
    tx_power_dbm: float = 24.0
    tx_gain_db: float = 6.0
    rx_gain_db: float = 6.0
    path_loss_exp: float = 2.5
    shadowing_db: float = 3.5
    noise_dbm_hz: float = -174.0
    bandwidth_hz: float = 20e6
    packet_bytes: int = 65535

    def __post_init__(self) -> None:
        if self.carrier_hz <= 0 or self.bandwidth_hz <= 0 or self.packet_bytes <= 0:
            raise ValueError("carrier, bandwidth and packet size must be positive")
        if self.path_loss_exp < 2.0:
            raise ValueError(f"path-loss exponent must be >= 2, got {self.path_loss_exp}")
        if self.shadowing_db < 0:
            raise ValueError("shadowing std dev must be >= 0")

    @property
    def noise_floor_dbm(self) -> float:
        return self.noise_dbm_hz + 10.0 * math.log10(self.bandwidth_hz)


class LinkSample(NamedTuple):
    """One radio measurement of a link, plus its hidden truth."""

    rss_dbm: float
    snr: float
    capacity_bps: float
    truth: LinkState


@dataclass
class SlotClock:
    """Two-scale discrete clock: packet slots and exploration instants.

    ``slot_s`` is the packet-slot length, ``instant_s`` the much shorter
    probe instant; ``slots_per_decision`` packet slots separate consecutive
    global relay assignments.  ``explore_cap`` bounds the instants spent on
    one candidate and may exceed the instants that fit in a single slot.
    The counters track the current period / slot / instant-within-burst.
    """

    slot_s: float = 0.1
    instant_s: float = 0.001
    slots_per_decision: int = 10
    explore_cap: int = 4
    period: int = 0
    slot: int = 0
    instant: int = 0

    def __post_init__(self) -> None:
        if not 0.0 < self.instant_s < self.slot_s:
            raise ValueError("need 0 < instant_s < slot_s")
        if self.slots_per_decision < 1 or self.explore_cap < 1:
            raise ValueError("slots_per_decision and explore_cap must be >= 1")

    @property
    def instants_per_slot(self) -> int:
        return int(self.slot_s / self.instant_s + 1e-9)

    @property
    def time(self) -> float:
        return (
            self.period * self.slots_per_decision + self.slot
        ) * self.slot_s + self.instant * self.instant_s

    def advance_slot(self) -> None:
        self.slot += 1
        if self.slot == self.slots_per_decision:
            self.slot = 0
            self.period += 1

    def advance_instant(self) -> None:
        self.instant += 1

    def reset_instants(self) -> None:
        self.instant = 0

    def fresh(self) -> "SlotClock":
        return SlotClock(
            self.slot_s, self.instant_s, self.slots_per_decision, self.explore_cap
        )


@dataclass(frozen=True)
class WorldParams:
    """Geometry and obstacle population of the service region."""

    region_m: float = 100.0
    zone_m: float = 10.0
    n_static: int = 16
    n_dynamic: int = 8
    source: Zone = (0, 0)
    destination: Zone = (9, 9)
    p_block: float = 0.5
    # Per-slot probability that a dynamic obstacle hops to a neighbor zone.
    # The default is pedestrian-scale dwell (seconds per 10 m zone at
    # 100 ms slots); 1.0 reproduces a plain lazy random walk.
    obstacle_move_prob: float = 0.05

    def __post_init__(self) -> None:
        if self.region_m <= 0 or self.zone_m <= 0:
            raise ValueError("region and zone edge must be positive")
        n = self.region_m / self.zone_m
        if abs(n - round(n)) > 1e-9:
            raise ValueError(
                f"region {self.region_m} m does not divide evenly into "
                f"{self.zone_m} m zones"
            )
        if self.n_static < 0 or self.n_dynamic < 0:
            raise ValueError("obstacle counts must be >= 0")
        if not 0.0 <= self.p_block <= 1.0:
            raise ValueError("p_block must be in [0, 1]")
        if not 0.0 < self.obstacle_move_prob <= 1.0:
            raise ValueError("obstacle_move_prob must be in (0, 1]")
        for name in ("source", "destination"):
            zone = getattr(self, name)
            if not self._in_grid(zone):
                raise ValueError(f"{name} zone {zone} outside the grid")

    @property
    def grid_n(self) -> int:
        return round(self.region_m / self.zone_m)

    def _in_grid(self, zone: Zone) -> bool:
        return 0 <= zone[0] < self.grid_n and 0 <= zone[1] < self.grid_n


@dataclass(eq=False)
class World:
    """Mutable simulation state owned by a single episode loop."""

    params: WorldParams
    seed: object
    rng: np.random.Generator
    static_obstacles: np.ndarray  # (n_static, 2) positions in meters
    dynamic_zones: list[Zone]
    # Persistent block outcome per (obstacle index, link target) for the
    # obstacle's current zone visit; dropped when the obstacle moves.
    _block_coins: dict[tuple[int, Zone], bool] = field(default_factory=dict, repr=False)
    _path_zones: dict[Zone, frozenset[Zone]] = field(default_factory=dict, repr=False)
    _static_blocked: dict[Zone, bool] = field(default_factory=dict, repr=False)

    @property
    def grid_n(self) -> int:
        return self.params.grid_n

    def zone_center(self, zone: Zone) -> tuple[float, float]:
        z = self.params.zone_m
        return ((zone[0] + 0.5) * z, (zone[1] + 0.5) * z)

    def zone_index(self, zone: Zone) -> int:
        return zone[1] * self.grid_n + zone[0]

    def link_distance(self, zone: Zone) -> float:
        sx, sy = self.zone_center(self.params.source)
        tx, ty = self.zone_center(zone)
        return math.hypot(tx - sx, ty - sy)

    def path_zones(self, zone: Zone) -> frozenset[Zone]:
        """Zones crossed by the segment from the source center to ``zone``."""
        cached = self._path_zones.get(zone)
        if cached is None:
            cached = _segment_zones(self, zone)
            self._path_zones[zone] = cached
        return cached

    def static_blocked(self, zone: Zone) -> bool:
        cached = self._static_blocked.get(zone)
        if cached is None:
            cached = _statically_blocked(self, zone)
            self._static_blocked[zone] = cached
        return cached


def _neighborhood(params: WorldParams, zone: Zone, radius: int = 2) -> list[Zone]:
    """In-grid zones within Chebyshev distance ``radius``, the zone excluded."""
    out = []
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            if dx == 0 and dy == 0:
                continue
            cand = (zone[0] + dx, zone[1] + dy)
            if params._in_grid(cand):
                out.append(cand)
    return out


def _segment_zones(world: World, zone: Zone) -> frozenset[Zone]:
    src = world.zone_center(world.params.source)
    dst = world.zone_center(zone)
    length = math.hypot(dst[0] - src[0], dst[1] - src[1])
    step = world.params.zone_m / 50.0
    n = max(2, int(length / step) + 1)
    ts = np.linspace(0.0, 1.0, n)
    xs = src[0] + ts * (dst[0] - src[0])
    ys = src[1] + ts * (dst[1] - src[1])
    z = world.params.zone_m
    hi = world.grid_n - 1
    cols = np.clip((xs / z).astype(int), 0, hi)
    rows = np.clip((ys / z).astype(int), 0, hi)
    return frozenset(zip(cols.tolist(), rows.tolist()))


def _point_segment_distance(px, py, ax, ay, bx, by) -> float:
    vx, vy = bx - ax, by - ay
    denom = vx * vx + vy * vy
    t = 0.0 if denom == 0.0 else max(0.0, min(1.0, ((px - ax) * vx + (py - ay) * vy) / denom))
    return math.hypot(px - (ax + t * vx), py - (ay + t * vy))


def _statically_blocked(world: World, zone: Zone) -> bool:
    if len(world.static_obstacles) == 0:
        return False
    ax, ay = world.zone_center(world.params.source)
    bx, by = world.zone_center(zone)
    radius = world.params.zone_m / 2.0
    for px, py in world.static_obstacles:
        if _point_segment_distance(px, py, ax, ay, bx, by) < radius:
            return True
    return False


def build_world(params: WorldParams, seed) -> World:
    """Deterministically populate a world from its parameters and seed.

    Static obstacles are uniform over the region, conditioned on the
    scenario staying meaningful: none may sit inside the source zone
    center's blocking disk (a point blocker on the transmitter severs every
    link at once), and at least one viable relay path must remain
    unblocked, otherwise no relay selection problem exists and no packet
    could ever be delivered.  Infeasible layouts are redrawn, which happens
    for a small fraction of seeds.  Dynamic obstacles start uniformly among
    the (up to) 24 zones surrounding the source.
    """
    rng = np.random.default_rng(seed)
    src_center = ((params.source[0] + 0.5) * params.zone_m, (params.source[1] + 0.5) * params.zone_m)
    radius = params.zone_m / 2.0

    for _ in range(1000):
        statics = []
        while len(statics) < params.n_static:
            x, y = rng.uniform(0.0, params.region_m, 2)
            if math.hypot(x - src_center[0], y - src_center[1]) < radius:
                continue
            statics.append((x, y))
        world = World(
            params=params,
            seed=seed,
            rng=rng,
            static_obstacles=np.array(statics).reshape(params.n_static, 2),
            dynamic_zones=[],
        )
        candidates = viable_set(world)
        if not candidates or any(not world.static_blocked(z) for z in candidates):
            break
    else:
        raise ValueError("could not place static obstacles with a clear relay path")

    spawn = _neighborhood(params, params.source)
    for _ in range(params.n_dynamic):
        world.dynamic_zones.append(spawn[int(rng.integers(len(spawn)))])
    return world


def viable_set(world: World) -> list[Zone]:
    """Candidate relay zones: in range of the source and strictly nearer
    to the destination, in deterministic (row-major) order."""
    params = world.params
    dest_center = world.zone_center(params.destination)
    src_center = world.zone_center(params.source)
    src_dist = math.hypot(src_center[0] - dest_center[0], src_center[1] - dest_center[1])
    out = []
    for zone in _neighborhood(params, params.source):
        c = world.zone_center(zone)
        if math.hypot(c[0] - dest_center[0], c[1] - dest_center[1]) < src_dist:
            out.append(zone)
    out.sort(key=lambda z: z[1] * params.grid_n + z[0])
    return out


def path_loss(radio: RadioParams, distance_m: float) -> float:
    """Distance-dependent path loss in dB: free space at 1 m plus the
    log-distance term with the configured exponent."""
    if distance_m <= 0.0:
        raise ValueError(f"distance must be > 0, got {distance_m}")
    fspl_1m = 20.0 * math.log10(4.0 * math.pi * radio.carrier_hz / _LIGHT_SPEED)
    return fspl_1m + 10.0 * radio.path_loss_exp * math.log10(distance_m)


def expected_rss_dbm(world: World, radio: RadioParams, zone: Zone) -> float:
    """Shadowing-free received signal strength of a source link, in dBm."""
    pl = path_loss(radio, world.link_distance(zone))
    return radio.tx_power_dbm + radio.tx_gain_db + radio.rx_gain_db - pl


def link_truth(world: World, zone: Zone, instant: int) -> LinkState:
    """Hidden state of the source link toward ``zone`` at one instant.

    Bad when a static obstacle sits within half a zone edge of the link
    segment, or when a dynamic obstacle currently in a zone crossed by the
    segment blocks it.  Whether a given obstacle blocks a given link is one
    Bernoulli(``p_block``) draw per zone visit, taken in obstacle order the
    first time the link is queried and held until the obstacle moves on:
    blockage is a property of where the obstacle stands relative to the
    beam path, not a per-probe coin flip, so the hidden state persists on
    the timescale of obstacle motion.
    """
    if instant < 0:
        raise ValueError("instant must be >= 0")
    if world.static_blocked(zone):
        return LinkState.BAD
    path = world.path_zones(zone)
    blocked = False
    for idx, obstacle_zone in enumerate(world.dynamic_zones):
        if obstacle_zone not in path:
            continue
        coin = world._block_coins.get((idx, zone))
        if coin is None:
            coin = bool(world.rng.random() < world.params.p_block)
            world._block_coins[(idx, zone)] = coin
        blocked = blocked or coin
    return LinkState.BAD if blocked else LinkState.GOOD


def sample_link(world: World, radio: RadioParams, zone: Zone, instant: int = 0) -> LinkSample:
    """One radio probe of a source link: RSS with a fresh shadowing draw,
    the derived SNR and capacity, and the hidden truth at this instant."""
    if zone == world.params.source:
        raise ValueError("link endpoints must be distinct zones")
    shadow = world.rng.normal(0.0, radio.shadowing_db)
    rss = expected_rss_dbm(world, radio, zone) + shadow
    snr = 10.0 ** ((rss - radio.noise_floor_dbm) / 10.0)
    capacity = radio.bandwidth_hz * math.log2(1.0 + snr)
    truth = link_truth(world, zone, instant)
    return LinkSample(rss, snr, capacity, truth)


def step_dynamics(world: World) -> World:
    """Advance every dynamic obstacle one packet slot.

    Lazy random walk on the zone grid: with probability
    ``obstacle_move_prob`` the obstacle hops to a uniformly chosen in-grid
    neighbor zone, otherwise it stays put for this slot.  The source zone
    itself is never entered, matching the clear disk around the transmitter
    that static placement keeps: an obstacle parked on the source would
    sever every link at once.
    """
    params = world.params
    for i, zone in enumerate(world.dynamic_zones):
        if world.rng.random() >= params.obstacle_move_prob:
            continue
        moves = [z for z in _neighborhood(params, zone, radius=1) if z != params.source]
        if moves:
            world.dynamic_zones[i] = moves[int(world.rng.integers(len(moves)))]
            for key in [k for k in world._block_coins if k[0] == i]:
                del world._block_coins[key]
    return world


def ack_sample(truth: LinkState, model: ChannelModel, rng: np.random.Generator) -> bool:
    """Draw one probe ACK outcome given the link's hidden state."""
    p = model.ack_good if truth == LinkState.GOOD else model.ack_bad
    return bool(rng.random() < p)


# --- calibration ------------------------------------------------------------

_MIN_SAMPLES = 100


def calibrate(
    state_pairs: Sequence[tuple[LinkState, LinkState]],
    obs_pairs: Sequence[tuple[LinkState, bool]],
) -> ChannelModel:
    """Empirical channel probabilities from observed truth/ACK traces.

    ``state_pairs`` are (state at t, state at t+1) transitions;
    ``obs_pairs`` are (state, ack) outcomes.  Each of the four conditionals
    needs at least 100 samples.

    Raises:
        InsufficientDataError: some conditional has too few samples.
        ValueError: the estimates violate the model orderings.
    """
    from_good = [b for a, b in state_pairs if a == LinkState.GOOD]
    from_bad = [b for a, b in state_pairs if a == LinkState.BAD]
    in_good = [w for s, w in obs_pairs if s == LinkState.GOOD]
    in_bad = [w for s, w in obs_pairs if s == LinkState.BAD]
    lacking = [
        name
        for name, rows in [
            ("stay_good", from_good),
            ("turn_good", from_bad),
            ("ack_good", in_good),
            ("ack_bad", in_bad),
        ]
        if len(rows) < _MIN_SAMPLES
    ]
    if lacking:
        raise InsufficientDataError(
            f"need >= {_MIN_SAMPLES} samples per conditional, too few for: "
            + ", ".join(lacking)
        )
    est = dict(
        stay_good=sum(1 for b in from_good if b == LinkState.GOOD) / len(from_good),
        turn_good=sum(1 for b in from_bad if b == LinkState.GOOD) / len(from_bad),
        ack_good=sum(1 for w in in_good if w) / len(in_good),
        ack_bad=sum(1 for w in in_bad if w) / len(in_bad),
    )
    try:
        return ChannelModel(**est)
    except ValueError as exc:
        raise ValueError(f"calibration produced an invalid channel: {est} ({exc})") from exc


# --- trace export -----------------------------------------------------------


class TraceRecord(NamedTuple):
    time_s: float
    zone: Zone
    truth: LinkState
    ack: bool
    rss_dbm: float


def collect_trace(
    world: World,
    radio: RadioParams,
    model: ChannelModel,
    zone: Zone,
    instants: int,
    clock: SlotClock | None = None,
) -> list[TraceRecord]:
    """Probe one link for ``instants`` consecutive instants and record
    (time, truth, ack, rss) per instant; obstacle dynamics advance once per
    elapsed packet slot."""
    clock = clock or SlotClock()
    per_slot = clock.instants_per_slot
    base = expected_rss_dbm(world, radio, zone)
    records = []
    for t in range(instants):
        truth = link_truth(world, zone, t)
        ack = ack_sample(truth, model, world.rng)
        rss = base + world.rng.normal(0.0, radio.shadowing_db)
        records.append(TraceRecord(t * clock.instant_s, zone, truth, ack, rss))
        if (t + 1) % per_slot == 0:
            step_dynamics(world)
    return records


_TRACE_HEADER = ["time_s", "zone_col", "zone_row", "truth", "ack", "rss_dbm"]


def write_trace(path, records: Iterable[TraceRecord]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_TRACE_HEADER)
        for rec in records:
            writer.writerow(
                [rec.time_s, rec.zone[0], rec.zone[1], int(rec.truth), int(rec.ack), rec.rss_dbm]
            )


def read_trace(path) -> list[TraceRecord]:
    path = Path(path)
    records = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != _TRACE_HEADER:
            raise ValueError(f"{path}: not a trace file (header {header})")
        for row in reader:
            records.append(
                TraceRecord(
                    float(row[0]),
                    (int(row[1]), int(row[2])),
                    LinkState(int(row[3])),
                    bool(int(row[4])),
                    float(row[5]),
                )
            )
    return records


def trace_pairs(
    records: Sequence[TraceRecord],
) -> tuple[list[tuple[LinkState, LinkState]], list[tuple[LinkState, bool]]]:
    """Split a trace into the transition and observation pairs calibrate() eats.

    Consecutive records of the same link count as one transition each.
    """
    state_pairs = []
    obs_pairs = []
    for prev, cur in zip(records[:-1], records[1:]):
        if prev.zone == cur.zone:
            state_pairs.append((prev.truth, cur.truth))
    for rec in records:
        obs_pairs.append((rec.truth, rec.ack))
    return state_pairs, obs_pairs
