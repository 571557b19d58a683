import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from errors import (OutOfDomainError, ParseError, PreconditionError,
                    UnrealizableTripletError, ValidationError)
from utils import load_document, read_document, require_field

logger = logging.getLogger(__name__)


# ----------------------------------------
# Boxes
# ----------------------------------------
@dataclass(frozen=True)
class BoxRegion:
    lower: tuple
    upper: tuple

    def __post_init__(self):
        object.__setattr__(self, "lower", tuple(float(v) for v in self.lower))
        object.__setattr__(self, "upper", tuple(float(v) for v in self.upper))
        if len(self.lower) != len(self.upper):
            raise ValidationError(f"box bounds differ in dimension: {self.lower} vs {self.upper}")
        for i, (lo, hi) in enumerate(zip(self.lower, self.upper)):
            if not lo < hi:
                raise ValidationError(f"box is empty in dimension {i}: [{lo}, {hi}]", offender=i)

    @property
    def dimension(self):
        return len(self.lower)

    @property
    def lo(self):
        return np.asarray(self.lower)

    @property
    def hi(self):
        return np.asarray(self.upper)

    @property
    def center(self):
        return (self.lo + self.hi) / 2.0

    @property
    def widths(self):
        return self.hi - self.lo

    def volume(self):
        return float(np.prod(self.widths))

    def contains(self, point, tol=0.0):
        p = np.asarray(point, dtype=float)
        return bool(np.all(p >= self.lo - tol) and np.all(p <= self.hi + tol))

    def contains_box(self, other, tol=0.0):
        return bool(np.all(other.lo >= self.lo - tol) and np.all(other.hi <= self.hi + tol))

    def intersects(self, other):
        """Closed-set intersection."""
        return bool(np.all(self.lo <= other.hi) and np.all(other.lo <= self.hi))

    def interior_intersects(self, other):
        return bool(np.all(self.lo < other.hi) and np.all(other.lo < self.hi))

    def clearance(self, other):
        """Largest per-dimension gap to `other`; negative when the boxes overlap in every dimension."""
        gaps = np.maximum(other.lo - self.hi, self.lo - other.hi)
        return float(np.max(gaps))

    def shrink(self, fraction):
        half = self.widths * fraction / 2.0
        return BoxRegion(self.center - half, self.center + half)

    def inflate(self, margin):
        return BoxRegion(self.lo - margin, self.hi + margin)


def subtract(a, b):
    """Boxes covering a minus the interior of b (at most 2n pieces)."""
    if not a.interior_intersects(b):
        return [a]
    pieces = []
    lo, hi = list(a.lower), list(a.upper)
    for d in range(a.dimension):
        if lo[d] < b.lower[d]:
            piece_hi = list(hi)
            piece_hi[d] = b.lower[d]
            pieces.append(BoxRegion(lo, piece_hi))
            lo[d] = b.lower[d]
        if hi[d] > b.upper[d]:
            piece_lo = list(lo)
            piece_lo[d] = b.upper[d]
            pieces.append(BoxRegion(piece_lo, hi))
            hi[d] = b.upper[d]
    return pieces


def subtract_all(a, boxes):
    pieces = [a]
    for b in boxes:
        pieces = [p for piece in pieces for p in subtract(piece, b)]
    return pieces


def inscribed_box_around(point, region):
    """Largest box centered at `point` that fits in `region`."""
    p = np.asarray(point, dtype=float)
    half = np.minimum(p - region.lo, region.hi - p)
    if np.any(half <= 0):
        raise PreconditionError(f"point {p.tolist()} is not interior to {region}")
    return BoxRegion(p - half, p + half)


def union_volume(boxes):
    return sum(b.volume() for b in boxes)


# ----------------------------------------
# Labeled workspace
# ----------------------------------------
@dataclass(frozen=True)
class LabeledWorkspace:
    dimension: int
    bounds: BoxRegion
    regions: dict  # proposition -> tuple of BoxRegion
    default_proposition: str

    @property
    def alphabet(self):
        return set(self.regions) | {self.default_proposition}

    @cached_property
    def listed_boxes(self):
        return [b for p in sorted(self.regions) for b in self.regions[p]]

    @cached_property
    def default_region(self):
        return subtract_all(self.bounds, self.listed_boxes)

    def label_of(self, point):
        p = np.asarray(point, dtype=float)
        if p.shape != (self.dimension,) or not self.bounds.contains(p):
            raise OutOfDomainError(f"point {p.tolist()} is outside the workspace bounds")
        for prop in sorted(self.regions):
            if any(b.contains(p) for b in self.regions[prop]):
                return prop
        return self.default_proposition

    def preimage(self, p):
        if p == "":
            return []
        if p == self.default_proposition:
            return list(self.default_region)
        if p in self.regions:
            return list(self.regions[p])
        raise ValidationError(f"unknown proposition '{p}'", offender=p)


def _vector(value, n, locus):
    if not isinstance(value, list) or len(value) != n or not all(isinstance(v, (int, float)) for v in value):
        raise ParseError(f"expected a list of {n} numbers", locus=locus)
    return tuple(float(v) for v in value)


def parse_workspace(text, source="<workspace>"):
    doc = load_document(text, source)
    return workspace_from_doc(doc, source)


def workspace_from_doc(doc, source="<workspace>"):
    n = require_field(doc, "dimension", int, source)
    if n < 1:
        raise ValidationError(f"dimension must be positive, got {n}", offender="dimension")
    raw_bounds = require_field(doc, "bounds", dict, source)
    bounds = BoxRegion(_vector(raw_bounds.get("lower"), n, f"{source}:bounds.lower"),
                       _vector(raw_bounds.get("upper"), n, f"{source}:bounds.upper"))
    default = require_field(doc, "default_proposition", str, source)

    regions = {}
    for i, raw in enumerate(require_field(doc, "regions", list, source)):
        locus = f"{source}:regions[{i}]"
        if not isinstance(raw, dict) or not isinstance(raw.get("proposition"), str):
            raise ParseError("region needs a string 'proposition'", locus=locus)
        box = BoxRegion(_vector(raw.get("lower"), n, f"{locus}.lower"), _vector(raw.get("upper"), n, f"{locus}.upper"))
        prop = raw["proposition"]
        if prop == default:
            raise ValidationError(f"default proposition '{default}' cannot carry a listed region", offender=prop)
        if not bounds.contains_box(box):
            raise ValidationError(f"region {i} ({prop}) leaves the workspace bounds", offender=prop)
        regions.setdefault(prop, []).append(box)

    listed = [(p, b) for p in sorted(regions) for b in regions[p]]
    for i, (p1, b1) in enumerate(listed):
        for p2, b2 in listed[i + 1:]:
            if b1.interior_intersects(b2):
                raise ValidationError(f"regions of '{p1}' and '{p2}' overlap", offender=f"{p1}/{p2}")

    ws = LabeledWorkspace(n, bounds, {p: tuple(bs) for p, bs in regions.items()}, default)
    logger.info(f"Parsed workspace {source}: n={n}, {len(listed)} regions, default={default}")
    return ws


def load_workspace(path):
    return workspace_from_doc(read_document(path), source=str(path))


# ----------------------------------------
# Reach-avoid tasks
# ----------------------------------------
@dataclass(frozen=True)
class RaTask:
    initial_set: tuple
    target_set: tuple
    unsafe_set: tuple
    source_triplet: object
    allowed_labels: frozenset = field(default_factory=frozenset)
    bounds: BoxRegion = None

    def in_initial(self, point, tol=0.0):
        return any(b.contains(point, tol) for b in self.initial_set)

    def in_target(self, point, core=1.0):
        """Target membership; `core` < 1 restricts to the guard region of each box."""
        boxes = self.target_set if core >= 1.0 else [self.guard_region(b, core) for b in self.target_set]
        return any(b.contains(point) for b in boxes)

    def guard_region(self, box, core):
        """`box` shrunk about its center by `core`, except along dimensions it spans end to end."""
        shrunk = box.shrink(core)
        if self.bounds is None:
            return shrunk
        spanning = (box.lo <= self.bounds.lo) & (box.hi >= self.bounds.hi)
        return BoxRegion(np.where(spanning, box.lo, shrunk.lo), np.where(spanning, box.hi, shrunk.hi))

    def initial_box_for(self, point):
        """Initial box holding `point` with the largest centered inscribed box."""
        best, best_volume = None, -1.0
        for b in self.initial_set:
            if not b.contains(point):
                continue
            try:
                vol = inscribed_box_around(point, b).volume()
            except PreconditionError:
                vol = 0.0
            if vol > best_volume:
                best, best_volume = b, vol
        if best is None:
            raise PreconditionError(f"entry point {np.asarray(point).tolist()} is not in the initial set")
        return best

    def target_box_nearest(self, point):
        p = np.asarray(point, dtype=float)
        return min(self.target_set, key=lambda b: (float(np.linalg.norm(b.center - p)), b.lower))


def ra_task_of_triplet(t, w):
    for label in (t.label_in, t.label_out) + tuple(t.self_labels):
        if label and label not in w.alphabet:
            raise ValidationError(f"triplet ({t.name()}) label '{label}' is not in the workspace alphabet",
                                  offender=label)
    initial = w.preimage(t.label_in)
    target = w.preimage(t.label_out)
    if not initial or not target:
        missing = t.label_in if not initial else t.label_out
        raise UnrealizableTripletError(f"triplet ({t.name()}): no region carries '{missing}'")

    allowed = {t.label_in, t.label_out} | set(t.self_labels)
    unsafe = [b for p in sorted(w.regions) if p not in allowed for b in w.regions[p]]
    if w.default_proposition not in allowed:
        unsafe.extend(w.default_region)
    logger.debug(f"Task for ({t.name()}): |S|={len(initial)} |T|={len(target)} |U|={len(unsafe)}")
    return RaTask(tuple(initial), tuple(target), tuple(unsafe), t, frozenset(allowed), w.bounds)
