import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd

from constants import (DEFAULT_DELTA_RATIO, DEFAULT_DT_RATIO, DEFAULT_MARGIN,
                       DEFAULT_MAX_ROUNDS, DEFAULT_REACH_TIME, DEFAULT_SWITCH_CORE,
                       DEFAULT_WIDTH_POLICY)
from errors import (BlockedTaskError, InfeasiblePaddingError, ParameterError,
                    PreconditionError, StructuralError, SynthesisError)
from workspace import BoxRegion, inscribed_box_around

logger = logging.getLogger(__name__)

_TOL = 1e-12


def smoothstep(s):
    s = np.clip(s, 0.0, 1.0)
    return s * s * (3.0 - 2.0 * s)


def smoothstep_slope(s):
    s = np.clip(s, 0.0, 1.0)
    return 6.0 * s * (1.0 - s)


# ----------------------------------------
# Scalar profiles
# ----------------------------------------
@dataclass(frozen=True)
class Segment:
    """
    One C1 piece of a profile on [start, end).

    kinds:
      const  -- v0
      smooth -- v0 -> v1 along the cubic smoothstep
      copy   -- follows `source`
      blend  -- smoothstep blend between `source` and a constant; `into` selects
                source -> v1 (True) or v0 -> source (False)
    """
    start: float
    end: float
    kind: str
    v0: float = 0.0
    v1: float = 0.0
    source: "ScalarProfile" = None
    into: bool = True

    def _s(self, t):
        return (t - self.start) / (self.end - self.start)

    def value(self, t):
        if self.kind == "const":
            return np.full_like(t, self.v0)
        if self.kind == "smooth":
            return self.v0 + (self.v1 - self.v0) * smoothstep(self._s(t))
        if self.kind == "copy":
            return self.source.value(t)
        w = smoothstep(self._s(t))
        src = self.source.value(t)
        if self.into:
            return (1.0 - w) * src + w * self.v1
        return (1.0 - w) * self.v0 + w * src

    def slope(self, t):
        if self.kind == "const":
            return np.zeros_like(t)
        if self.kind == "smooth":
            return (self.v1 - self.v0) * smoothstep_slope(self._s(t)) / (self.end - self.start)
        if self.kind == "copy":
            return self.source.slope(t)
        s = self._s(t)
        w, dw = smoothstep(s), smoothstep_slope(s) / (self.end - self.start)
        src, dsrc = self.source.value(t), self.source.slope(t)
        if self.into:
            return dw * (self.v1 - src) + (1.0 - w) * dsrc
        return dw * (src - self.v0) + w * dsrc


@dataclass(frozen=True)
class ScalarProfile:
    segments: tuple

    def __post_init__(self):
        segs = self.segments
        if not segs or segs[0].start != 0.0 or not math.isinf(segs[-1].end):
            raise StructuralError("profile must start at 0 and extend to infinity")
        for a, b in zip(segs, segs[1:]):
            if a.end != b.start:
                raise StructuralError(f"profile has a gap or overlap at {a.end}/{b.start}")

    @classmethod
    def constant(cls, v):
        return cls((Segment(0.0, math.inf, "const", float(v)),))

    @classmethod
    def through(cls, values, times):
        """Smoothstep chain through `values` at knot `times` (times[0] == 0), constant afterwards."""
        if len(values) != len(times):
            raise StructuralError("values and knot times differ in length")
        segs = []
        for (v0, v1), (t0, t1) in zip(zip(values, values[1:]), zip(times, times[1:])):
            kind = "const" if v0 == v1 else "smooth"
            segs.append(Segment(float(t0), float(t1), kind, float(v0), float(v1)))
        segs.append(Segment(float(times[-1]), math.inf, "const", float(values[-1])))
        if segs[0].start > 0.0:
            segs.insert(0, Segment(0.0, segs[0].start, "const", float(values[0])))
        if all(s.kind == "const" and s.v0 == segs[0].v0 for s in segs):
            return cls.constant(segs[0].v0)
        return cls(tuple(segs))

    @property
    def knots(self):
        return [s.start for s in self.segments[1:]]

    def settle_time(self):
        """Time after which the profile is constant (the last piece is always constant)."""
        last = self.segments[-1]
        if last.kind == "const":
            return last.start
        return max(last.start, last.source.settle_time())

    def _evaluate(self, t, method):
        arr = np.asarray(t, dtype=float)
        scalar = arr.ndim == 0
        ts = np.atleast_1d(arr)
        out = np.empty_like(ts)
        for seg in self.segments:
            mask = (ts >= seg.start) & (ts < seg.end)
            if np.any(mask):
                out[mask] = getattr(seg, method)(ts[mask])
        return float(out[0]) if scalar else out

    def value(self, t):
        return self._evaluate(t, "value")

    def slope(self, t):
        return self._evaluate(t, "slope")


# ----------------------------------------
# Tubes
# ----------------------------------------
@dataclass(frozen=True)
class SpatioTemporalTube:
    lower: tuple
    upper: tuple
    reach_time: float
    task: object = None
    adjustments: tuple = ()  # (padded start, padded end, dimension)

    @property
    def dimension(self):
        return len(self.lower)

    def bounds_at(self, t):
        lo = np.array([p.value(t) for p in self.lower])
        hi = np.array([p.value(t) for p in self.upper])
        return lo, hi

    def sample(self, ts):
        """(len(ts), n) arrays of lower and upper bounds."""
        lo = np.column_stack([p.value(ts) for p in self.lower])
        hi = np.column_stack([p.value(ts) for p in self.upper])
        return lo, hi

    def settle_time(self):
        return max(p.settle_time() for p in self.lower + self.upper)

    def horizon(self, dt):
        return max(self.reach_time, self.settle_time()) + 10.0 * dt

    def slope_bound(self, ts):
        return max(float(np.max(np.abs(p.slope(ts)))) for p in self.lower + self.upper)


@dataclass(frozen=True)
class Funnel:
    p: float
    q: float
    mu: float

    def __post_init__(self):
        if not (self.q > 0 and self.p >= self.q and self.mu > 0):
            raise ParameterError(f"invalid funnel p={self.p} q={self.q} mu={self.mu}")

    def __call__(self, t):
        return funnel_eval(self, t)


def funnel_eval(f, t):
    return (f.p - f.q) * np.exp(-f.mu * t) + f.q


def build_reachability_tube(start, target, t_c, width_policy=DEFAULT_WIDTH_POLICY, waypoints=()):
    """
    Smoothstep tube from `start` to `target`, both shrunk about their centers by
    `width_policy`; constant after `t_c`. Waypoint boxes are visited at equal
    time slices.
    """
    boxes = [start] + list(waypoints) + [target]
    if any(b.dimension != start.dimension for b in boxes):
        raise StructuralError("start, waypoint and target boxes differ in dimension")
    if not t_c > 0:
        raise ParameterError(f"reach time must be positive, got {t_c}")
    if not 0 < width_policy <= 1:
        raise ParameterError(f"width policy must lie in (0, 1], got {width_policy}")

    shrunk = [b.shrink(width_policy) for b in boxes]
    times = np.linspace(0.0, t_c, len(shrunk))
    lower = tuple(ScalarProfile.through([b.lower[i] for b in shrunk], times) for i in range(start.dimension))
    upper = tuple(ScalarProfile.through([b.upper[i] for b in shrunk], times) for i in range(start.dimension))
    return SpatioTemporalTube(lower, upper, float(t_c))


def tube_frame(tube, dt, horizon=None):
    horizon = tube.horizon(dt) if horizon is None else horizon
    ts = np.arange(0.0, horizon + dt / 2, dt)
    lo, hi = tube.sample(ts)
    data = {"t": ts}
    for i in range(tube.dimension):
        data[f"gamma_L_{i + 1}"] = lo[:, i]
        data[f"gamma_U_{i + 1}"] = hi[:, i]
    return pd.DataFrame(data)


# ----------------------------------------
# Conflicts and circumvention
# ----------------------------------------
@dataclass(frozen=True)
class Conflict:
    obstacle: BoxRegion
    t_a: float
    t_b: float
    persistent: bool = False


@dataclass(frozen=True)
class CircumventPlan:
    obstacle: BoxRegion
    conflict_interval: tuple
    bypass_dimension: int
    bypass_side: str  # "below" | "above"
    corridor: tuple   # (lower, upper) in the bypass dimension
    delta: float
    displacement: float = 0.0

    @property
    def padded_interval(self):
        t_a, t_b = self.conflict_interval
        return t_a - self.delta, t_b + self.delta


def _runs(mask):
    """(first, last) index pairs of consecutive True runs."""
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        return []
    breaks = np.flatnonzero(np.diff(idx) > 1)
    starts = np.concatenate(([idx[0]], idx[breaks + 1]))
    ends = np.concatenate((idx[breaks], [idx[-1]]))
    return list(zip(starts, ends))


def detect_conflicts(tube, unsafe, dt, margin=0.0):
    """Maximal sampled intervals during which the tube meets an (inflated) unsafe box."""
    if not dt > 0:
        raise ParameterError(f"sampling step must be positive, got {dt}")
    ts = np.arange(0.0, tube.horizon(dt) + dt / 2, dt)
    lo, hi = tube.sample(ts)
    conflicts = []
    for box in unsafe:
        grown = box.inflate(margin) if margin > 0 else box
        mask = np.all((lo < grown.hi) & (hi > grown.lo), axis=1)
        for first, last in _runs(mask):
            persistent = last == len(ts) - 1
            t_a = max(0.0, ts[first] - dt)
            t_b = math.inf if persistent else ts[last] + dt
            conflicts.append(Conflict(box, float(t_a), float(t_b), persistent))
    conflicts.sort(key=lambda c: (c.t_a, c.obstacle.lower))
    if conflicts:
        logger.debug(f"{len(conflicts)} conflict(s), first on [{conflicts[0].t_a:.3f}, {conflicts[0].t_b:.3f}]")
    return conflicts


def circumvent_candidates(tube, conflict, workspace, delta, margin):
    """Feasible bypass plans ordered by corridor displacement."""
    if not delta > 0 or not margin > 0:
        raise ParameterError("circumvent padding and margin must be positive")
    if conflict.persistent:
        raise BlockedTaskError(f"conflict with {conflict.obstacle} persists at steady state")
    bounds = getattr(workspace, "bounds", workspace)
    obs = conflict.obstacle
    ts = np.linspace(conflict.t_a, conflict.t_b, 64)
    lo, hi = tube.sample(ts)

    plans = []
    approach = {}
    for d in range(tube.dimension):
        width = float(np.max(hi[:, d] - lo[:, d]))
        center = float(np.mean((hi[:, d] + lo[:, d]) / 2.0))
        approach[d] = "below" if (lo[0, d] + hi[0, d]) / 2.0 <= (obs.lower[d] + obs.upper[d]) / 2.0 else "above"
        gaps = {"below": (bounds.lower[d], obs.lower[d] - margin - width, obs.lower[d] - margin),
                "above": (bounds.upper[d], obs.upper[d] + margin, obs.upper[d] + margin + width)}
        for side in ("below", "above"):
            bound, c_lo, c_hi = gaps[side]
            gap = obs.lower[d] - bound if side == "below" else bound - obs.upper[d]
            if gap + _TOL < width + 2.0 * margin:
                continue
            displacement = abs((c_lo + c_hi) / 2.0 - center)
            plans.append(CircumventPlan(obs, (conflict.t_a, conflict.t_b), d, side, (c_lo, c_hi), delta, displacement))
    # ties go to the side the tube approaches from
    plans.sort(key=lambda p: (round(p.displacement, 9), p.bypass_side != approach[p.bypass_dimension],
                              p.bypass_dimension))
    return plans


def build_circumvent(tube, conflict, workspace, delta, margin):
    plans = circumvent_candidates(tube, conflict, workspace, delta, margin)
    if not plans:
        raise BlockedTaskError(f"no gap around {conflict.obstacle} fits the tube")
    return plans[0]


def _adapt_profile(profile, t0, t_a, t_b, t1, value):
    return ScalarProfile((
        Segment(0.0, t0, "copy", source=profile),
        Segment(t0, t_a, "blend", v1=value, source=profile, into=True),
        Segment(t_a, t_b, "const", value),
        Segment(t_b, t1, "blend", v0=value, source=profile, into=False),
        Segment(t1, math.inf, "copy", source=profile),
    ))


def adapt_tube(tube, plan):
    """Re-piece the bypass dimension around the plan's corridor; other dimensions untouched."""
    if plan is None:
        return tube
    t_a, t_b = plan.conflict_interval
    if not t_b > t_a:
        return tube
    t0, t1 = plan.padded_interval
    if t0 < 0:
        raise InfeasiblePaddingError(f"padded interval starts before 0 ({t0:.4f}); increase the reach time")
    d = plan.bypass_dimension
    for s, e, dim in tube.adjustments:
        if dim == d and t0 < e and s < t1:
            raise InfeasiblePaddingError(f"padded interval [{t0:.3f}, {t1:.3f}] collides with [{s:.3f}, {e:.3f}]")
    lower, upper = list(tube.lower), list(tube.upper)
    lower[d] = _adapt_profile(tube.lower[d], t0, t_a, t_b, t1, plan.corridor[0])
    upper[d] = _adapt_profile(tube.upper[d], t0, t_a, t_b, t1, plan.corridor[1])
    return replace(tube, lower=tuple(lower), upper=tuple(upper), adjustments=tube.adjustments + ((t0, t1, d),))


# ----------------------------------------
# Verification
# ----------------------------------------
@dataclass
class VerificationReport:
    passed: bool
    dt: float
    margin: float
    horizon: float
    slope_bound: float
    violations: list = field(default_factory=list)

    def to_dict(self):
        return {"passed": self.passed, "dt": self.dt, "margin": self.margin, "horizon": self.horizon,
                "slope_bound": self.slope_bound, "violations": self.violations}


def _first_violation(mask_2d):
    rows, cols = np.nonzero(mask_2d)
    if rows.size == 0:
        return None
    k = np.argmin(rows)
    return int(rows[k]), int(cols[k])


def verify_stt(tube, task, dt, margin=DEFAULT_MARGIN):
    """
    Sampled check of the tube conditions:
      a) tube(0) inside the initial set
      b) tube(t_c) inside the target set
      c) clearance >= margin from every unsafe box
      d) lower < upper
    Samples run to max(t_c, settle time) + 10 dt, so the constant tail is covered.
    """
    if not dt > 0:
        raise ParameterError(f"sampling step must be positive, got {dt}")
    horizon = tube.horizon(dt)
    ts = np.arange(0.0, horizon + dt / 2, dt)
    lo, hi = tube.sample(ts)
    violations = []

    lo0, hi0 = tube.bounds_at(0.0)
    start_box = _box_or_none(lo0, hi0)
    if start_box is None or not any(b.contains_box(start_box, _TOL) for b in task.initial_set):
        violations.append({"condition": "a", "time": 0.0, "dimension": None,
                           "detail": f"tube(0)={lo0.tolist()}..{hi0.tolist()} is not inside the initial set"})

    loc, hic = tube.bounds_at(tube.reach_time)
    end_box = _box_or_none(loc, hic)
    if end_box is None or not any(b.contains_box(end_box, _TOL) for b in task.target_set):
        violations.append({"condition": "b", "time": tube.reach_time, "dimension": None,
                           "detail": f"tube(t_c)={loc.tolist()}..{hic.tolist()} is not inside the target set"})

    tol = 1e-9 * margin + _TOL
    for box in task.unsafe_set:
        gaps = np.maximum(box.lo - hi, lo - box.hi)
        clearance = np.max(gaps, axis=1)
        bad = np.flatnonzero(clearance < margin - tol)
        if bad.size:
            k = int(bad[0])
            violations.append({"condition": "c", "time": float(ts[k]), "dimension": int(np.argmax(gaps[k])),
                               "detail": f"clearance {clearance[k]:.3e} from {box.lower}..{box.upper}"})

    hit = _first_violation(hi <= lo)
    if hit is not None:
        k, i = hit
        violations.append({"condition": "d", "time": float(ts[k]), "dimension": i,
                           "detail": f"lower {lo[k, i]:.6g} >= upper {hi[k, i]:.6g}"})

    report = VerificationReport(not violations, float(dt), float(margin), float(horizon),
                                tube.slope_bound(ts), violations)
    if violations:
        logger.debug(f"Tube verification failed: {[v['condition'] for v in violations]}")
    return report


def _box_or_none(lo, hi):
    if np.any(hi <= lo):
        return None
    return BoxRegion(lo, hi)


# ----------------------------------------
# Synthesis
# ----------------------------------------
@dataclass(frozen=True)
class TubeParams:
    t_c: float = DEFAULT_REACH_TIME
    width_policy: float = DEFAULT_WIDTH_POLICY
    delta: float = None
    margin: float = DEFAULT_MARGIN
    dt: float = None
    max_rounds: int = DEFAULT_MAX_ROUNDS
    switch_core: float = DEFAULT_SWITCH_CORE
    waypoints: tuple = ()

    def __post_init__(self):
        if self.delta is None:
            object.__setattr__(self, "delta", DEFAULT_DELTA_RATIO * self.t_c)
        if self.dt is None:
            object.__setattr__(self, "dt", DEFAULT_DT_RATIO * self.t_c)
        if not (self.t_c > 0 and self.delta > 0 and self.margin > 0 and self.dt > 0):
            raise ParameterError(f"tube parameters must be positive: {self}")
        if not 0 < self.switch_core <= 1:
            raise ParameterError(f"switch core must lie in (0, 1], got {self.switch_core}")

    @classmethod
    def from_dict(cls, d):
        d = dict(d or {})
        waypoints = tuple(BoxRegion(w["lower"], w["upper"]) for w in d.pop("waypoints", []))
        known = {"t_c", "width_policy", "delta", "margin", "dt", "max_rounds", "switch_core"}
        unknown = set(d) - known
        if unknown:
            raise ParameterError(f"unknown tube parameters: {sorted(unknown)}")
        return cls(waypoints=waypoints, **d)


def _target_window(start, target):
    """Keep the start interval in dimensions where it already lies inside the target."""
    lo, hi = list(target.lower), list(target.upper)
    for i in range(start.dimension):
        if target.lower[i] <= start.lower[i] and start.upper[i] <= target.upper[i]:
            lo[i], hi[i] = start.lower[i], start.upper[i]
    return BoxRegion(lo, hi)


def synthesize_stt(task, entry_point, params=None):
    params = params or TubeParams()
    entry = np.asarray(entry_point, dtype=float)
    if not task.in_initial(entry):
        raise PreconditionError(f"entry point {entry.tolist()} is not in the initial set")
    start = inscribed_box_around(entry, task.initial_box_for(entry))
    target = _target_window(start, task.target_box_nearest(entry))
    tube = build_reachability_tube(start, target, params.t_c, params.width_policy, params.waypoints)
    tube = replace(tube, task=task)

    report = None
    for round_ in range(params.max_rounds + 1):
        report = verify_stt(tube, task, params.dt, params.margin)
        if report.passed:
            logger.info(f"Tube for ({task.source_triplet.name()}) verified after {round_} circumvent round(s)")
            return tube
        conflicts = detect_conflicts(tube, task.unsafe_set, params.dt, params.margin)
        if not conflicts:
            raise SynthesisError("tube fails conditions that circumvention cannot repair", report)
        if round_ == params.max_rounds:
            break
        conflict = conflicts[0]
        try:
            candidates = circumvent_candidates(tube, conflict, _bounds_of(task), params.delta, params.margin)
        except BlockedTaskError as e:
            raise SynthesisError(f"blocked task: {e}", report) from e
        if not candidates:
            raise SynthesisError(f"blocked task: no gap around {conflict.obstacle} fits the tube", report)
        tube = _first_clearing(tube, candidates, params, report)
    raise SynthesisError(f"no verified tube after {params.max_rounds} circumvent rounds", report)


def _first_clearing(tube, candidates, params, report):
    for plan in candidates:
        try:
            adapted = adapt_tube(tube, plan)
        except InfeasiblePaddingError as e:
            logger.warning(f"Circumvent candidate d={plan.bypass_dimension} {plan.bypass_side} rejected: {e}")
            continue
        if not detect_conflicts(adapted, [plan.obstacle], params.dt, params.margin):
            logger.info(f"Circumvent on [{plan.conflict_interval[0]:.3f}, {plan.conflict_interval[1]:.3f}] "
                        f"via dimension {plan.bypass_dimension} {plan.bypass_side}")
            return adapted
        logger.warning(f"Circumvent candidate d={plan.bypass_dimension} {plan.bypass_side} still meets the obstacle")
    raise SynthesisError("no circumvent candidate clears the obstacle", report)


def _bounds_of(task):
    bounds = getattr(task, "bounds", None)
    if bounds is None:
        raise StructuralError("task carries no workspace bounds")
    return bounds
