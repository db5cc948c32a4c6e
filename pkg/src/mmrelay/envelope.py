"""Concave piecewise-linear functions on [0, 1] as lower envelopes of lines.

Value functions of the exploration stopping problem are minima of finitely
many affine functions of the belief, and the one-step backup maps lines to
lines.  Representing each stage value exactly as the set of lines that
attain the pointwise minimum somewhere on [0, 1] therefore gives an exact
solver: no belief grid, no interpolation error.  A grid method exists in
``mmrelay.solver`` purely as an independent oracle for tests.

Canonical form: lines are stored in left-to-right activation order, which
for a lower envelope means strictly decreasing slope, with the interior
breakpoints strictly increasing in (0, 1).  Two lines closer than ``TOL``
in both coefficients are treated as identical, and segments shorter than
``TOL`` are merged away.
"""

from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass
from typing import Iterable, NamedTuple

import numpy as np

from .belief import ChannelModel

__all__ = ["TOL", "Envelope", "Line", "branch_transform", "crossing", "min_of"]

# Coefficient / breakpoint identity tolerance.  Every quantity handled here
# is O(max stop cost) and horizons are short, so double precision leaves
# plenty of headroom at 1e-12.
TOL = 1e-12


class Line(NamedTuple):
    """The affine function ``intercept + slope * r``."""

    intercept: float
    slope: float

    def at(self, r: float) -> float:
        return self.intercept + self.slope * r


def _same_line(a: Line, b: Line) -> bool:
    return abs(a.intercept - b.intercept) <= TOL and abs(a.slope - b.slope) <= TOL


def _cross(a: Line, b: Line) -> float:
    # r where the two lines meet; caller guarantees distinct slopes.
    return (b.intercept - a.intercept) / (a.slope - b.slope)


@dataclass(frozen=True)
class Envelope:
    """Lower envelope of a finite line set, restricted to [0, 1].

    ``lines[i]`` attains the pointwise minimum exactly on
    ``[edges[i], edges[i + 1]]`` where ``edges = (0, *breakpoints, 1)``.
    Instances are immutable; build them with :meth:`from_lines`.
    """

    lines: tuple[Line, ...]
    breakpoints: tuple[float, ...]

    @classmethod
    def from_lines(cls, candidates: Iterable[Line]) -> "Envelope":
        """Canonicalize a candidate line set into its lower envelope.

        The result is pointwise equal to ``min`` over the candidates on
        [0, 1]; dominated lines and duplicates are dropped, and lines whose
        support would be shorter than ``TOL`` are merged away.

        Raises:
            ValueError: empty input or non-finite coefficients.
        """
        pool = [Line(float(c[0]), float(c[1])) for c in candidates]
        if not pool:
            raise ValueError("cannot build an envelope from no lines")
        for ln in pool:
            if not (np.isfinite(ln.intercept) and np.isfinite(ln.slope)):
                raise ValueError(f"non-finite line {ln}")

        # Collapse (near-)equal slopes, keeping the lowest intercept, then
        # order by decreasing slope = left-to-right activation order.
        pool.sort(key=lambda ln: (-ln.slope, ln.intercept))
        distinct: list[Line] = []
        for ln in pool:
            if distinct and abs(distinct[-1].slope - ln.slope) <= TOL:
                if ln.intercept < distinct[-1].intercept:
                    distinct[-1] = ln
                continue
            distinct.append(ln)

        # Hull scan over the real line: with decreasing slopes the crossing
        # abscissas of consecutive survivors must strictly increase.
        hull: list[Line] = []
        for ln in distinct:
            while hull:
                if len(hull) == 1:
                    # ln replaces the only line iff it is lower at -inf side
                    # of their crossing... a single predecessor always keeps
                    # a left portion, so stop.
                    break
                if _cross(hull[-2], ln) <= _cross(hull[-2], hull[-1]):
                    hull.pop()
                else:
                    break
            hull.append(ln)

        while True:
            edges = cls._edges(hull)
            # Clip each activation interval to [0, 1] and drop slivers.
            drop = None
            for i in range(len(hull)):
                lo = max(edges[i], 0.0)
                hi = min(edges[i + 1], 1.0)
                if hi - lo <= TOL:
                    drop = i
                    break
            if drop is None:
                break
            del hull[drop]

        bps = tuple(_cross(hull[i], hull[i + 1]) for i in range(len(hull) - 1))
        return cls(tuple(hull), bps)

    @staticmethod
    def _edges(hull: list[Line]) -> list[float]:
        inner = [_cross(hull[i], hull[i + 1]) for i in range(len(hull) - 1)]
        return [-np.inf, *inner, np.inf]

    def evaluate(self, r):
        """Value of the envelope at ``r`` (scalar or array) in [0, 1]."""
        arr = np.asarray(r, dtype=float)
        if np.any(arr < 0.0) or np.any(arr > 1.0):
            raise ValueError("envelope domain is [0, 1]")
        eta = np.array([ln.intercept for ln in self.lines])
        beta = np.array([ln.slope for ln in self.lines])
        vals = np.min(eta[:, None] + beta[:, None] * arr.ravel(), axis=0)
        if np.isscalar(r) or arr.ndim == 0:
            return float(vals[0])
        return vals.reshape(arr.shape)

    def __call__(self, r):
        return self.evaluate(r)

    def line_at(self, r: float) -> Line:
        """The line active at ``r`` (right-continuous at breakpoints)."""
        return self.lines[bisect_right(self.breakpoints, r)]

    def shift(self, c: float) -> "Envelope":
        """The envelope raised by the constant ``c``."""
        shifted = tuple(Line(ln.intercept + float(c), ln.slope) for ln in self.lines)
        return Envelope(shifted, self.breakpoints)

    def __add__(self, other: "Envelope") -> "Envelope":
        """Pointwise sum, again a concave piecewise-linear envelope.

        On each segment of the merged breakpoint grid the sum of the two
        active lines is affine, and because a concave function lies below
        every one of its extended segments, re-canonicalizing those segment
        sums reproduces the sum exactly.
        """
        if not isinstance(other, Envelope):
            return NotImplemented
        cuts = sorted(set(self.breakpoints) | set(other.breakpoints))
        edges = [0.0]
        for c in cuts:
            if c - edges[-1] > TOL:
                edges.append(c)
        if 1.0 - edges[-1] > TOL:
            edges.append(1.0)
        else:
            edges[-1] = 1.0
        pieces = []
        for lo, hi in zip(edges[:-1], edges[1:]):
            mid = 0.5 * (lo + hi)
            a = self.line_at(mid)
            b = other.line_at(mid)
            pieces.append(Line(a.intercept + b.intercept, a.slope + b.slope))
        return Envelope.from_lines(pieces)


def min_of(first: Envelope, *rest: Envelope) -> Envelope:
    """Lower envelope of the union: pointwise minimum of the arguments."""
    pool: list[Line] = list(first.lines)
    for env in rest:
        pool.extend(env.lines)
    return Envelope.from_lines(pool)


def branch_transform(env: Envelope, model: ChannelModel, ack: bool) -> Envelope:
    """Observation-branch image ``r -> P(ack | r) * env(posterior(r, ack))``.

    Both the branch probability and the branch-weighted predicted-good mass
    are affine in the prior belief, and the posterior's denominator cancels
    against the branch probability, so every line of ``env`` maps to a line.
    The returned envelope is the canonical form of those images and equals
    the exact expectation branch pointwise.
    """
    m = model
    gap = m.stay_good - m.turn_good
    # P(ack success | r) = a + b * r
    a = m.turn_good * m.ack_good + (1.0 - m.turn_good) * m.ack_bad
    b = gap * (m.ack_good - m.ack_bad)
    if ack:
        p0, p1 = a, b
        w0, w1 = m.turn_good * m.ack_good, gap * m.ack_good
    else:
        p0, p1 = 1.0 - a, -b
        w0, w1 = m.turn_good * (1.0 - m.ack_good), gap * (1.0 - m.ack_good)
    mapped = [
        Line(ln.intercept * p0 + ln.slope * w0, ln.intercept * p1 + ln.slope * w1)
        for ln in env.lines
    ]
    return Envelope.from_lines(mapped)


def crossing(
    env: Envelope,
    probe: Line,
    side: str,
    lo: float = 0.0,
    hi: float = 1.0,
) -> float | None:
    """Requested root of ``probe(r) - env(r) = 0`` on ``[lo, hi]``.

    Solved exactly segment by segment; each envelope segment reduces the
    problem to one linear equation.  When the probe coincides with a whole
    segment, ``leftmost`` returns the left end of the first coincident
    interval and ``rightmost`` the right end of the last, which keeps
    threshold extraction deterministic.  Returns ``None`` when there is no
    root.
    """
    if side not in ("leftmost", "rightmost"):
        raise ValueError(f"side must be 'leftmost' or 'rightmost', got {side!r}")
    if not 0.0 <= lo <= hi <= 1.0:
        raise ValueError(f"need 0 <= lo <= hi <= 1, got [{lo}, {hi}]")

    edges = [0.0, *env.breakpoints, 1.0]
    segments = []
    for i, ln in enumerate(env.lines):
        x0, x1 = max(edges[i], lo), min(edges[i + 1], hi)
        if x0 > x1:
            continue
        segments.append((ln, x0, x1))
    if side == "rightmost":
        segments.reverse()

    for ln, x0, x1 in segments:
        if _same_line(ln, probe):
            return x0 if side == "leftmost" else x1
        d0 = probe.at(x0) - ln.at(x0)
        d1 = probe.at(x1) - ln.at(x1)
        if d0 == 0.0 and d1 == 0.0:
            return x0 if side == "leftmost" else x1
        if d0 == 0.0:
            return x0
        if d1 == 0.0:
            return x1
        if d0 * d1 < 0.0:
            return x0 + d0 * (x1 - x0) / (d0 - d1)
    return None
