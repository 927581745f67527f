"""Rate-optimal model selection along the total-rate axis.

A trained grid maps out points (total rate, metric). The models worth
keeping are the vertices of the upper convex hull of that cloud: every
other model is dominated by a mix of two hull models at the same rate.
Each hull vertex is the best performer over the rate intervals adjacent
to it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass
class FrontierPoint:
    """One candidate model in the (rate, metric) plane."""

    run_id: object
    x: float
    y: float
    selected: bool = False

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(
                f"point {self.run_id!r} has non-finite coordinates "
                f"({self.x}, {self.y}); filter sentinels before selection"
            )


def _cross(o, a, b):
    return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)


def upper_convex_hull(points) -> list:
    """Vertices of the upper hull, in increasing x.

    Points sharing an x keep only the highest y; collinear interior
    points are dropped. The returned points are the input objects with
    ``selected`` set; everything else has it cleared.
    """
    points = list(points)
    if not points:
        raise ValueError("need at least one point")
    for p in points:
        p.selected = False

    best_at_x = {}
    for p in points:
        cur = best_at_x.get(p.x)
        if cur is None or p.y > cur.y:
            best_at_x[p.x] = p
    candidates = sorted(best_at_x.values(), key=lambda p: p.x)

    hull = []
    for p in candidates:
        # pop while the middle point is on or below the new chord
        while len(hull) >= 2 and _cross(hull[-2], hull[-1], p) >= 0.0:
            hull.pop()
        hull.append(p)
    for p in hull:
        p.selected = True
    return hull


@dataclass(frozen=True)
class IntervalBest:
    """Best run over one rate interval; bounds may be infinite."""

    lo: float
    hi: float
    run_id: object


def best_per_interval(points, hull) -> list:
    """Partition the rate axis at hull x's and name the best run in each.

    Within an interval between consecutive hull vertices every point lies
    under the chord, so the better endpoint wins; equal endpoints resolve
    to the cheaper (left) one. The outer intervals belong to the extreme
    vertices.
    """
    if not hull:
        raise ValueError("empty hull")
    xs = [p.x for p in hull]
    if xs != sorted(xs):
        raise ValueError("hull must be in increasing x")
    if len(hull) == 1:
        return [IntervalBest(-math.inf, math.inf, hull[0].run_id)]
    out = [IntervalBest(-math.inf, xs[0], hull[0].run_id)]
    for left, right in zip(hull, hull[1:]):
        winner = left if left.y >= right.y else right
        out.append(IntervalBest(left.x, right.x, winner.run_id))
    out.append(IntervalBest(xs[-1], math.inf, hull[-1].run_id))
    return out
