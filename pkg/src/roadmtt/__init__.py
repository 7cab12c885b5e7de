"""Road-constrained multi-target tracking for a hovering UAV sensor.

The package tracks road-bound ground vehicles from range/elevation/azimuth
measurements.  Road center-lines are compiled into segment chains
(:mod:`roadmtt.roadmap`), each segment supplying equality constraints on
heading, position and speed (:mod:`roadmtt.constraints`).  A JPDA filter
with track-existence management (:mod:`roadmtt.jpda`,
:mod:`roadmtt.track_manager`) is wrapped by a variable-structure
multiple-model layer that maintains a sliding window of candidate segments
per track (:mod:`roadmtt.vsmm`).  Monte-Carlo experiments and the OSPA
metric live in :mod:`roadmtt.sim` and :mod:`roadmtt.metrics`.
"""

__version__ = "0.1.0"
