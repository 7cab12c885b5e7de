"""Road constraints on the target state and the equality-correction step.

A road segment induces up to three constraint blocks on the 6-D state:

* heading: velocity is parallel to the segment (its normal component and
  the vertical rate are zero);
* position: the target sits on the segment's carrying line and on the
  ground plane;
* speed: road-speed bounds, relaxed from an inequality to an equality by
  clamping to the violated bound.

Blocks are written column-wise as ``x' D = d`` with ``D`` a 6 x c matrix.
Lines are expressed in normal form ``n . p = rho`` with
``n = (-sin theta, cos theta)``, which stays finite for near-vertical
headings (the intercept form ``y = tan(theta) x + kappa`` does not).

``correct`` solves the weighted least-distance problem: minimize
``(x' - x)' W^{-1} (x' - x)`` subject to ``D' x' = d``, whose closed form
is ``x' = A x + B`` with ``A = I - W D (D' W D)^{-1} D'`` and
``B = W D (D' W D)^{-1} d``; the covariance maps through ``A``.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .models import GaussianEstimate
from .roadmap import RoadSegment

logger = logging.getLogger("roadmtt.constraints")


class DegenerateConstraint(ValueError):
    """Raised when the active constraint directions are not independent."""


class ConstraintCase(enum.IntEnum):
    """Which constraint blocks are active (0 = unconstrained)."""

    NONE = 0
    HEADING = 1
    POSITION = 2
    SPEED = 3
    HEADING_POSITION = 4
    HEADING_SPEED = 5
    POSITION_SPEED = 6
    ALL = 7


_CASE_BLOCKS = {
    ConstraintCase.NONE: (),
    ConstraintCase.HEADING: ("heading",),
    ConstraintCase.POSITION: ("position",),
    ConstraintCase.SPEED: ("speed",),
    ConstraintCase.HEADING_POSITION: ("heading", "position"),
    ConstraintCase.HEADING_SPEED: ("heading", "speed"),
    ConstraintCase.POSITION_SPEED: ("position", "speed"),
    ConstraintCase.ALL: ("heading", "position", "speed"),
}


@dataclass(slots=True)
class SpeedLimits:
    """Axis-aligned velocity box; z components are pinned to zero."""

    v_inf: np.ndarray  # (3,)
    v_sup: np.ndarray  # (3,)


@dataclass(slots=True)
class ConstraintSpec:
    D: np.ndarray          # (6, c), independent columns
    d: np.ndarray          # (c,)
    active: tuple[str, ...] = ()

    @property
    def count(self) -> int:
        return self.D.shape[1]


@dataclass
class CorrectionConfig:
    W: np.ndarray = field(default_factory=lambda: np.eye(6))

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=float)
        if self.W.shape != (6, 6):
            raise ValueError("W must be 6x6")


def heading_constraint(seg: RoadSegment) -> list[tuple[str, np.ndarray, float]]:
    """Velocity normal to the segment and the vertical rate are zero."""
    n = seg.normal
    col = np.zeros(6)
    col[3], col[4] = n[0], n[1]
    vz = np.zeros(6)
    vz[5] = 1.0
    return [("heading", col, 0.0), ("vz", vz, 0.0)]


def position_constraint(seg: RoadSegment) -> list[tuple[str, np.ndarray, float]]:
    """Position on the segment's carrying line and on the ground plane."""
    n = seg.normal
    col = np.zeros(6)
    col[0], col[1] = n[0], n[1]
    pz = np.zeros(6)
    pz[2] = 1.0
    return [("line", col, seg.rho), ("pz", pz, 0.0)]


def speed_box(seg: RoadSegment, band: tuple[float, float]) -> SpeedLimits:
    """World-axes velocity box spanned by the speed band along the segment.

    The band [s_min, s_max] of speeds along the travel direction maps to
    the componentwise hull of s_min*w and s_max*w, where w is the unit
    travel direction.  Axis-aligned segments therefore pin the cross
    component to zero, matching the relaxed road-speed model.
    """
    s_min, s_max = band
    if s_min > s_max:
        raise ValueError("speed band is empty")
    w = seg.direction
    lo2 = np.minimum(s_min * w, s_max * w)
    hi2 = np.maximum(s_min * w, s_max * w)
    return SpeedLimits(np.array([lo2[0], lo2[1], 0.0]), np.array([hi2[0], hi2[1], 0.0]))


def speed_limit_constraint(v: np.ndarray, lim: SpeedLimits) -> list[tuple[str, np.ndarray, float]]:
    """Equality rows for the relaxed speed bounds at velocity ``v``.

    Horizontal components clamp to the violated bound only; the vertical
    rate row is always active with bound zero.
    """
    rows = []
    names = ("vx", "vy")
    for k in range(2):
        col = np.zeros(6)
        col[3 + k] = 1.0
        if v[k] < lim.v_inf[k]:
            rows.append((f"{names[k]}_low", col, float(lim.v_inf[k])))
        elif v[k] > lim.v_sup[k]:
            rows.append((f"{names[k]}_high", col, float(lim.v_sup[k])))
    vz = np.zeros(6)
    vz[5] = 1.0
    rows.append(("vz", vz, 0.0))
    return rows


def compose(case: ConstraintCase, seg: RoadSegment,
            velocity: np.ndarray | None = None,
            band: tuple[float, float] | None = None) -> ConstraintSpec:
    """Stack the blocks of a constraint case into one (D, d) pair.

    Duplicate vertical-rate columns are merged silently; any remaining
    dependent column is dropped with a warning so D keeps full column
    rank.  The speed block needs the predicted ``velocity`` and the road
    speed ``band``.
    """
    case = ConstraintCase(case)
    rows: list[tuple[str, np.ndarray, float]] = []
    for block in _CASE_BLOCKS[case]:
        if block == "heading":
            rows.extend(heading_constraint(seg))
        elif block == "position":
            rows.extend(position_constraint(seg))
        else:
            if velocity is None or band is None:
                raise ValueError("speed block needs the predicted velocity and the speed band")
            v = np.asarray(velocity, dtype=float)
            if v.shape[0] == 6:  # accept a full state for convenience
                v = v[3:6]
            rows.extend(speed_limit_constraint(v, speed_box(seg, band)))
    cols: list[np.ndarray] = []
    dvals: list[float] = []
    labels: list[str] = []
    for label, col, dval in rows:
        if label == "vz" and "vz" in labels:
            continue
        candidate = np.column_stack(cols + [col]) if cols else col[:, None]
        if np.linalg.matrix_rank(candidate, tol=1e-10) == len(cols) + 1:
            cols.append(col)
            dvals.append(dval)
            labels.append(label)
        else:
            logger.warning("dropping dependent constraint column %r (case %s)", label, case.name)
    if not cols:
        return ConstraintSpec(np.zeros((6, 0)), np.zeros(0), ())
    return ConstraintSpec(np.column_stack(cols), np.array(dvals), tuple(labels))


def correct(est: GaussianEstimate, spec: ConstraintSpec,
            cfg: CorrectionConfig | None = None) -> GaussianEstimate:
    """Project an estimate onto the constraint set (W-weighted).

    With no active columns the input object is returned unchanged.  The
    corrected covariance is re-symmetrized and tiny negative eigenvalues
    from rank loss are floored at zero.
    """
    if spec.count == 0:
        return est
    W = np.eye(6) if cfg is None else cfg.W
    D, d = spec.D, spec.d
    M = D.T @ W @ D
    try:
        G = np.linalg.solve(M, (W @ D).T).T   # W D (D' W D)^{-1}
    except np.linalg.LinAlgError as exc:
        raise DegenerateConstraint(f"constraint normal matrix is singular: {exc}") from exc
    mean = est.mean - G @ (D.T @ est.mean - d)
    A = np.eye(6) - G @ D.T
    cov = A @ est.cov @ A.T
    cov = 0.5 * (cov + cov.T)
    vals, vecs = np.linalg.eigh(cov)
    if vals[0] < 0.0:
        cov = (vecs * np.maximum(vals, 0.0)) @ vecs.T
        cov = 0.5 * (cov + cov.T)
    return GaussianEstimate(mean, cov)


def perpendicular_distance(seg: RoadSegment, point: np.ndarray) -> float:
    """Unsigned distance from a 2-D point to the segment's carrying line."""
    n = seg.normal
    return abs(float(n[0] * point[0] + n[1] * point[1]) - seg.rho)


def nearest_segment(chain, point: np.ndarray) -> int:
    """Index of the chain segment nearest to a 2-D point.

    Distance is to the finite segment (not the carrying line); ties break
    toward the larger index, i.e. further along the travel direction.
    """
    best, best_d = 0, math.inf
    for i, seg in enumerate(chain):
        a, b = seg.start, seg.end
        ab = b - a
        t = float(np.dot(point - a, ab) / max(np.dot(ab, ab), 1e-12))
        t = min(1.0, max(0.0, t))
        proj = a + t * ab
        dist = float(np.hypot(point[0] - proj[0], point[1] - proj[1]))
        if dist <= best_d:
            best, best_d = i, dist
    return best
