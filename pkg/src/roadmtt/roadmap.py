"""Road network compilation: polyline center-lines to segment chains.

A road arrives as an ordered polyline of map coordinates (travel
direction = point order).  Compilation runs in three stages:

1. ``split_by_orientation`` cuts the polyline into parts whose tangent
   stays on one side of the vertical, so each part is single-valued in x
   (west-going parts are mirrored before fitting).
2. ``fit_polynomial`` fits y = f(x) per part with a degree cap,
   degrading the degree when the data cannot support it.
3. ``segment_part`` walks the fitted curve and cuts a new segment
   whenever the accumulated heading change exceeds ``delta_m``.

Each :class:`RoadSegment` carries the chord heading ``theta`` and the
intercept ``kappa`` of the carrying line ``y = tan(theta)·x + kappa``;
downstream constraint code uses the equivalent normal form
``n·p = rho`` with ``n = (-sin theta, cos theta)``, which stays finite
near vertical headings.

Public API: ``load_roads_json``, ``split_by_orientation``,
``fit_polynomial``, ``heading_change``, ``segment_part``,
``build_road_map``, ``compile_road_map``, ``roadmap_to_json``,
``roadmap_from_json``.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import Polynomial
from scipy import integrate

logger = logging.getLogger("roadmtt.roadmap")

ORIENT_EAST = 1   # tangent angle in (-90 deg, 90 deg); x grows along travel
ORIENT_WEST = -1  # tangent angle in (90 deg, 270 deg); x shrinks along travel

# Zero-velocity birth prior spread: loose position, wide speed (Table-like
# defaults; overridable per scenario).
DEFAULT_BIRTH_COV_DIAG = (50.0, 50.0, 50.0, 141.0, 141.0, 10.0)

# Road-frame birth prior (used when an entry speed is declared): along
# axis loose enough that a missed first detection still matches the
# place, yet tight enough that the newborn gate does not sweep up the
# clutter around the site; cross axis tight so side-by-side lanes stay
# distinguishable.
ROAD_FRAME_BIRTH_VAR = (64.0, 6.25, 4.0, 12.25, 2.25, 1.0)


@dataclass
class RoadPart:
    """Maximal run of polyline points with a single travel orientation."""

    points: np.ndarray            # (n, 2) map coordinates, travel order
    orient: int                   # ORIENT_EAST or ORIENT_WEST
    poly: Polynomial | None = None  # fitted on mirrored x when orient == -1
    fit_order: int | None = None    # effective degree after any degradation
    fit_rms: float | None = None    # RMS residual of the fit (m)

    def mirrored_x(self) -> np.ndarray:
        return self.orient * self.points[:, 0]


@dataclass
class RoadSegment:
    """Straight piece of a compiled road, in travel order.

    ``theta`` is the chord heading: east-going parts land in
    (-pi/2, pi/2), west-going parts in (pi/2, 3*pi/2).  ``kappa`` is the
    intercept of the carrying line and blows up near vertical headings;
    use ``normal``/``rho`` instead of ``kappa`` for any computation.
    """

    start: np.ndarray  # (2,)
    end: np.ndarray    # (2,)
    theta: float
    kappa: float
    index: int = 0

    @property
    def direction(self) -> np.ndarray:
        return np.array([math.cos(self.theta), math.sin(self.theta)])

    @property
    def normal(self) -> np.ndarray:
        return np.array([-math.sin(self.theta), math.cos(self.theta)])

    @property
    def rho(self) -> float:
        n = self.normal
        return float(n[0] * self.start[0] + n[1] * self.start[1])

    @property
    def length(self) -> float:
        return float(np.hypot(*(self.end - self.start)))


@dataclass
class Road:
    road_id: str
    segments: list[RoadSegment]
    parts: list[RoadPart] = field(default_factory=list)


@dataclass
class BirthPlace:
    """Entry point of a road where new targets may appear."""

    road_index: int
    entry: str          # "start" (travel order) or "end" (against it)
    mean: np.ndarray    # (6,) zero-velocity state at the entry point
    cov: np.ndarray     # (6, 6)


@dataclass
class RoadMap:
    roads: list[Road]
    birth_places: list[BirthPlace]
    delta_m_deg: float
    n_p: int
    _chains: dict = field(default_factory=dict, repr=False)

    def road_index(self, road_id: str) -> int:
        for i, r in enumerate(self.roads):
            if r.road_id == road_id:
                return i
        raise KeyError(f"unknown road id {road_id!r}")

    def oriented_chain(self, road_index: int, entry: str) -> tuple[RoadSegment, ...]:
        """Segments of a road ordered along the direction of travel.

        ``entry="start"`` keeps the compiled order; ``entry="end"``
        reverses the chain and flips every segment so that ``start`` is
        always the end entered first.
        """
        key = (road_index, entry)
        if key in self._chains:
            return self._chains[key]
        segs = self.roads[road_index].segments
        if entry == "start":
            chain = tuple(segs)
        elif entry == "end":
            flipped = []
            for i, s in enumerate(reversed(segs)):
                start, end = s.end.copy(), s.start.copy()
                theta = math.atan2(end[1] - start[1], end[0] - start[0])
                kappa = _chord_intercept(start, theta)
                flipped.append(RoadSegment(start, end, theta, kappa, index=i))
            chain = tuple(flipped)
        else:
            raise ValueError(f"entry must be 'start' or 'end', got {entry!r}")
        self._chains[key] = chain
        return chain


def _chord_intercept(start: np.ndarray, theta: float) -> float:
    return float(start[1] - math.tan(theta) * start[0])


def load_roads_json(source) -> tuple[list[tuple[str, np.ndarray]], list[dict]]:
    """Parse a road-input document into (id, points) pairs plus birth entries.

    ``source`` may be a dict, a JSON string, or a path to a JSON file of
    the shape ``{"roads": [{"id", "points"}], "birth": [{"road", "end"}]}``.
    """
    if isinstance(source, dict):
        doc = source
    elif isinstance(source, str) and source.lstrip().startswith("{"):
        doc = json.loads(source)
    else:
        with open(source, encoding="utf-8") as fh:
            doc = json.load(fh)
    if "roads" not in doc or not doc["roads"]:
        raise ValueError("road input contains no roads")
    lines = []
    seen = set()
    for entry in doc["roads"]:
        rid = entry["id"]
        if rid in seen:
            raise ValueError(f"duplicate road id {rid!r}")
        seen.add(rid)
        pts = np.asarray(entry["points"], dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
            raise ValueError(f"road {rid!r}: points must be an (n>=2, 2) array")
        if not np.all(np.isfinite(pts)):
            raise ValueError(f"road {rid!r}: non-finite coordinates")
        dup = np.where(np.all(pts[1:] == pts[:-1], axis=1))[0]
        if dup.size:
            raise ValueError(f"road {rid!r}: consecutive duplicate point at index {dup[0] + 1}")
        lines.append((rid, pts))
    births = list(doc.get("birth", []))
    for b in births:
        if b.get("road") not in seen:
            raise ValueError(f"birth entry references unknown road {b.get('road')!r}")
        if b.get("end") not in ("start", "end"):
            raise ValueError(f"birth entry end must be 'start' or 'end', got {b.get('end')!r}")
    return lines, births


def split_by_orientation(points: np.ndarray) -> list[RoadPart]:
    """Split a polyline into maximal runs of constant travel orientation.

    Orientation is the sign of dx/ds from central differences (one-sided
    at the ends).  Vertical tangents inherit the preceding point's
    orientation; runs shorter than two points merge into their
    neighbour so every part can carry a fit.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
        raise ValueError("polyline must be an (n>=2, 2) array")
    n = len(pts)
    dx = np.empty(n)
    dx[0] = pts[1, 0] - pts[0, 0]
    dx[-1] = pts[-1, 0] - pts[-2, 0]
    if n > 2:
        dx[1:-1] = pts[2:, 0] - pts[:-2, 0]
    orient = np.sign(dx).astype(int)
    for i in range(n):  # ties follow the previous point
        if orient[i] == 0:
            orient[i] = orient[i - 1] if i > 0 else 0
    if orient[0] == 0:
        nz = orient[orient != 0]
        orient[0] = nz[0] if nz.size else ORIENT_EAST

    runs: list[list[int]] = [[0]]
    for i in range(1, n):
        if orient[i] == orient[runs[-1][0]]:
            runs[-1].append(i)
        else:
            runs.append([i])
    merged: list[list[int]] = []
    for run in runs:  # absorb single-point runs into the preceding part
        if len(run) < 2 and merged:
            merged[-1].extend(run)
        elif len(run) < 2 and not merged:
            runs_rest = run
            merged.append(runs_rest)
        else:
            merged.append(run)
    if len(merged) > 1 and len(merged[0]) < 2:
        merged[1] = merged[0] + merged[1]
        merged = merged[1:]
    return [RoadPart(points=pts[run], orient=int(orient[run[0]])) for run in merged]


def fit_polynomial(part: RoadPart, order: int) -> RoadPart:
    """Fit y = f(x) on the part (mirrored x for west-going parts).

    The fit is performed on a scaled domain for conditioning.  The
    degree degrades automatically when the points cannot support it
    (few points, collinear data); the effective degree and RMS residual
    are recorded on the part.
    """
    xm = part.mirrored_x()
    y = part.points[:, 1]
    k = min(int(order), len(xm) - 1)
    if k < 0:
        raise ValueError("part has no points")
    while True:
        poly, diag = Polynomial.fit(xm, y, k, full=True)
        rank = diag[1]
        if rank >= k + 1 or k == 0:
            break
        k = rank - 1 if rank >= 1 else 0
    if k < order:
        logger.warning("fit degree degraded from %d to %d (%d points)", order, k, len(xm))
    part.poly = poly
    part.fit_order = k
    part.fit_rms = float(np.sqrt(np.mean((poly(xm) - y) ** 2)))
    return part


def poly_coefficients(part: RoadPart) -> np.ndarray:
    """Fit coefficients in the plain (unscaled) x variable, low order first."""
    return part.poly.convert(domain=[-1.0, 1.0], window=[-1.0, 1.0]).coef


def _as_poly(poly_or_coeffs) -> Polynomial:
    if isinstance(poly_or_coeffs, Polynomial):
        return poly_or_coeffs
    return Polynomial(np.asarray(poly_or_coeffs, dtype=float))


def heading_change(poly_or_coeffs, x1: float, x2: float) -> float:
    """Signed heading change (rad) of y = f(x) between x1 and x2.

    Integrates f''/(1 + f'^2) with adaptive quadrature, absolute
    tolerance 1e-8.  Additive over subintervals; antisymmetric under
    swapping the endpoints.
    """
    p = _as_poly(poly_or_coeffs)
    d1 = p.deriv(1)
    d2 = p.deriv(2)
    val, _ = integrate.quad(
        lambda x: d2(x) / (1.0 + d1(x) ** 2), x1, x2, epsabs=1e-8, limit=200
    )
    return val


_CUT_TOL = 1e-6     # bisection tolerance on the cut abscissa (m)
_GRID_POINTS = 4096  # dense heading grid per part used to bracket cuts


def segment_part(part: RoadPart, delta_m_deg: float) -> list[RoadSegment]:
    """Cut a fitted part into segments of bounded heading change.

    Walks the fitted curve in travel order and places a cut at the first
    abscissa where the accumulated |heading change| since the previous
    cut exceeds ``delta_m_deg``.  The heading at x is atan(f'(x)), whose
    difference equals the integral of f''/(1+f'^2); cuts are located by
    bisection to 1e-6 m.
    """
    if part.poly is None:
        raise ValueError("part must be fitted before segmentation")
    if delta_m_deg <= 0:
        raise ValueError("delta_m must be positive")
    delta_m = math.radians(delta_m_deg)
    d1 = part.poly.deriv(1)
    xm = part.mirrored_x()
    a, b = float(xm[0]), float(xm[-1])
    if not b > a:
        raise ValueError("degenerate part: zero x extent")

    grid = np.linspace(a, b, _GRID_POINTS)
    head = np.arctan(d1(grid))

    cuts = [a]
    h_ref = float(head[0])
    i = 1
    while i < _GRID_POINTS:
        if abs(float(head[i]) - h_ref) > delta_m:
            lo, hi = float(grid[i - 1]), float(grid[i])
            while hi - lo > _CUT_TOL:
                mid = 0.5 * (lo + hi)
                if abs(math.atan(d1(mid)) - h_ref) > delta_m:
                    hi = mid
                else:
                    lo = mid
            cuts.append(hi)
            h_ref = math.atan(d1(hi))
            # restart the scan just past the cut
            i = int(np.searchsorted(grid, hi, side="right"))
        else:
            i += 1
    if cuts[-1] < b:
        cuts.append(b)

    segments = []
    for idx in range(len(cuts) - 1):
        xs, xe = cuts[idx], cuts[idx + 1]
        p_s = np.array([part.orient * xs, float(part.poly(xs))])
        p_e = np.array([part.orient * xe, float(part.poly(xe))])
        theta = _branch_theta(p_s, p_e, part.orient)
        segments.append(RoadSegment(p_s, p_e, theta, _chord_intercept(p_s, theta), index=idx))
    return segments


def _branch_theta(p_s: np.ndarray, p_e: np.ndarray, orient: int) -> float:
    """Chord heading on the (-90, 90) or (90, 270) degree branch."""
    raw = math.atan2(p_e[1] - p_s[1], p_e[0] - p_s[0])
    if orient == ORIENT_WEST and raw < 0.0:
        raw += 2.0 * math.pi
    return raw


def _road_frame_cov(direction: np.ndarray) -> np.ndarray:
    """Rotate the road-frame birth variances into world coordinates."""
    c, s = direction
    rot = np.array([[c, -s], [s, c]])
    v = ROAD_FRAME_BIRTH_VAR
    cov = np.zeros((6, 6))
    cov[:2, :2] = rot @ np.diag(v[:2]) @ rot.T
    cov[2, 2] = v[2]
    cov[3:5, 3:5] = rot @ np.diag(v[3:5]) @ rot.T
    cov[5, 5] = v[5]
    return cov


def build_road_map(
    lines: list[tuple[str, np.ndarray]],
    n_p: int = 6,
    delta_m_deg: float = 3.0,
    birth: list[dict] | None = None,
    birth_cov: np.ndarray | None = None,
    birth_speed: float | None = None,
) -> RoadMap:
    """Compile center-lines into a RoadMap of chained segments.

    Per road: orientation split, per-part polynomial fit, heading-change
    segmentation, then exact chaining (each segment's start is snapped to
    the previous segment's end, which only moves endpoints across part
    boundaries by the fit residual).
    """
    if not lines:
        raise ValueError("no roads to compile")
    cov_given = birth_cov is not None
    if birth_cov is None:
        birth_cov = np.diag(DEFAULT_BIRTH_COV_DIAG).astype(float)
    roads = []
    for rid, pts in lines:
        parts = split_by_orientation(pts)
        segments: list[RoadSegment] = []
        for part in parts:
            fit_polynomial(part, n_p)
            segments.extend(segment_part(part, delta_m_deg))
        for k in range(1, len(segments)):
            prev, cur = segments[k - 1], segments[k]
            if not np.array_equal(cur.start, prev.end):
                cur.start = prev.end.copy()
                orient = ORIENT_EAST if abs(_wrap_pi(cur.theta)) < math.pi / 2 else ORIENT_WEST
                cur.theta = _branch_theta(cur.start, cur.end, orient)
                cur.kappa = _chord_intercept(cur.start, cur.theta)
        for k, seg in enumerate(segments):
            seg.index = k
        roads.append(Road(road_id=rid, segments=segments, parts=parts))

    places = []
    ids = [r.road_id for r in roads]
    for decl in birth or []:
        ri = ids.index(decl["road"])
        segs = roads[ri].segments
        if decl["end"] == "start":
            point, seg = segs[0].start, segs[0]
            direction = seg.end - seg.start
        else:
            point, seg = segs[-1].end, segs[-1]
            direction = seg.start - seg.end
        direction = direction / np.linalg.norm(direction)
        mean = np.array([point[0], point[1], 0.0, 0.0, 0.0, 0.0])
        cov = birth_cov.copy()
        if birth_speed is not None:
            mean[3:5] = birth_speed * direction
            if not cov_given:
                cov = _road_frame_cov(direction)
        places.append(BirthPlace(ri, decl["end"], mean, cov))
    return RoadMap(roads=roads, birth_places=places, delta_m_deg=delta_m_deg, n_p=n_p)


def _wrap_pi(angle: float) -> float:
    return math.atan2(math.sin(angle), math.cos(angle))


def compile_road_map(source, n_p: int = 6, delta_m_deg: float = 3.0,
                     birth_cov: np.ndarray | None = None,
                     birth_speed: float | None = None) -> RoadMap:
    """Compile directly from a road-input JSON document, string, or path."""
    lines, births = load_roads_json(source)
    return build_road_map(lines, n_p=n_p, delta_m_deg=delta_m_deg,
                          birth=births, birth_cov=birth_cov,
                          birth_speed=birth_speed)


def roadmap_to_json(rm: RoadMap) -> dict:
    return {
        "delta_m_deg": rm.delta_m_deg,
        "n_p": rm.n_p,
        "roads": [
            {
                "id": road.road_id,
                "segments": [
                    {
                        "start": [float(s.start[0]), float(s.start[1])],
                        "end": [float(s.end[0]), float(s.end[1])],
                        "theta": s.theta,
                        "kappa": s.kappa,
                    }
                    for s in road.segments
                ],
            }
            for road in rm.roads
        ],
        "birth_places": [
            {
                "road": rm.roads[bp.road_index].road_id,
                "entry": bp.entry,
                "mean": [float(v) for v in bp.mean],
                "cov": [[float(v) for v in row] for row in bp.cov],
            }
            for bp in rm.birth_places
        ],
    }


def roadmap_from_json(doc: dict) -> RoadMap:
    roads = []
    for rd in doc["roads"]:
        segs = [
            RoadSegment(
                np.array(sd["start"], dtype=float),
                np.array(sd["end"], dtype=float),
                float(sd["theta"]),
                float(sd["kappa"]),
                index=i,
            )
            for i, sd in enumerate(rd["segments"])
        ]
        roads.append(Road(road_id=rd["id"], segments=segs))
    ids = [r.road_id for r in roads]
    places = [
        BirthPlace(
            ids.index(bd["road"]),
            bd["entry"],
            np.array(bd["mean"], dtype=float),
            np.array(bd["cov"], dtype=float),
        )
        for bd in doc.get("birth_places", [])
    ]
    return RoadMap(roads=roads, birth_places=places,
                   delta_m_deg=float(doc["delta_m_deg"]), n_p=int(doc["n_p"]))
