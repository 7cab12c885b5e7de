"""Canned experiment geometry: a four-lane rural road seen by a UAV.

Each travel direction is one dogleg lane: a straight approach, a single
gentle arc, and a long straight run-out.  The opposing lane is the same
poly-line reversed and offset by the lane width, so a direction pair
stays parallel the whole way and both lanes start exactly on their
pinned entry points.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erf

from .sim import Scenario

UAV_POS = (-213224.699, 6209585.65, 150.0)

# road entry points, two per travel direction (UTM-like metric frame)
BIRTH_POINTS = (
    (-213074.6991, 6209735.658),
    (-213065.3738, 6209739.889),
    (-212139.8879, 6209992.308),
    (-212113.9793, 6209997.771),
)

LANE_WIDTH = 4.0       # lateral gap between opposing lanes (m)
BLOCKED_STRIP = (-212600.0, -212500.0)   # ground x-interval with no returns


def synth_road(start, end, turn_deg: float = 7.0, kink_frac: float = 0.2,
               blend_width: float = 40.0, spacing: float = 2.5) -> list:
    """Poly-line from start to end with one smooth dogleg bend.

    The heading swings ``turn_deg`` through a Gaussian-smoothed step
    centred ``kink_frac`` of the way along (the bend has no curvature
    corners, so low-order polynomial fits track it without ringing).
    The integrated curve is then rotated and scaled onto the requested
    endpoints, which preserves the bend angle exactly.
    """
    start = np.asarray(start, dtype=float)
    end = np.asarray(end, dtype=float)
    chord = end - start
    dist = float(np.hypot(*chord))
    if dist <= 0.0:
        raise ValueError("road endpoints coincide")
    if not 0.0 < kink_frac < 1.0:
        raise ValueError("kink_frac must be in (0, 1)")
    theta = math.radians(turn_deg)
    n = max(int(math.ceil(dist / spacing)), 2)
    h = dist / n
    s_mid = (np.arange(n) + 0.5) * h
    rel = -theta * 0.5 * (1.0 + erf((s_mid - kink_frac * dist)
                                    / (blend_width * math.sqrt(2.0))))
    steps = h * np.stack([np.cos(rel), np.sin(rel)], axis=1)
    raw = np.vstack([np.zeros(2), np.cumsum(steps, axis=0)])
    v = raw[-1]
    zr, zi = np.linalg.solve(np.array([[v[0], -v[1]], [v[1], v[0]]]), chord)
    rot = np.array([[zr, -zi], [zi, zr]])
    pts = start + raw @ rot.T
    return [[float(x), float(y)] for x, y in pts]


def _offset_reverse(points, width: float) -> list:
    """The opposing lane: the same poly-line reversed, shifted ``width``
    to the left of the reversed travel direction."""
    pts = np.asarray(points, dtype=float)
    tang = np.gradient(pts, axis=0)
    tang /= np.linalg.norm(tang, axis=1, keepdims=True)
    right = np.stack([tang[:, 1], -tang[:, 0]], axis=1)
    shifted = pts + width * right
    return [[float(x), float(y)] for x, y in shifted[::-1]]


def _lane_pair(entry_fwd, entry_rev, turn_deg: float, kink_frac: float,
               spacing: float) -> tuple:
    """Forward lane plus its reversed offset twin.

    The forward endpoint is chosen so the reversed lane starts exactly
    on ``entry_rev``; the run-out heading barely moves between passes,
    so a few fixed-point iterations land it to sub-mm.
    """
    start = np.asarray(entry_fwd, dtype=float)
    target = np.asarray(entry_rev, dtype=float)
    end = target.copy()
    for _ in range(4):
        fwd = synth_road(start, end, turn_deg, kink_frac, spacing=spacing)
        t = np.asarray(fwd[-1]) - np.asarray(fwd[-2])
        t /= np.hypot(*t)
        end = target + LANE_WIDTH * np.array([-t[1], t[0]])
    fwd = synth_road(start, end, turn_deg, kink_frac, spacing=spacing)
    return fwd, _offset_reverse(fwd, LANE_WIDTH)


def paper_road_doc(spacing: float = 2.5) -> dict:
    """Two direction pairs between the entry clusters.

    The pairs bend to opposite sides of the corridor, which keeps all
    four lanes separated mid-route; the bends sit in the near third of
    the corridor where the cross-range noise is smallest, so segment
    hypotheses stay decidable while they are being crossed.
    """
    b1, b2, b3, b4 = BIRTH_POINTS
    r1, r3 = _lane_pair(b1, b3, +7.0, 0.2, spacing)
    r2, r4 = _lane_pair(b2, b4, -7.0, 0.35, spacing)
    roads = [{"id": "r1", "points": r1}, {"id": "r2", "points": r2},
             {"id": "r3", "points": r3}, {"id": "r4", "points": r4}]
    birth = [{"road": f"r{i + 1}", "end": "start"} for i in range(4)]
    return {"roads": roads, "birth": birth}


VEHICLE_WINDOWS = ((0, 1, 57), (1, 25, 80), (2, 10, 66), (3, 30, 80))


def paper_scenario(blocked: bool = False, **overrides) -> Scenario:
    """The four-vehicle reference scenario; ``blocked`` adds the dead strip."""
    kw = dict(
        road_doc=paper_road_doc(),
        vehicles=[{"road": r, "t_on": a, "t_off": b}
                  for r, a, b in VEHICLE_WINDOWS],
        uav_pos=UAV_POS,
    )
    if blocked:
        kw["blocked_x"] = [BLOCKED_STRIP]
    kw.update(overrides)
    return Scenario(**kw)
