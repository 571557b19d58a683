import json
import math

import numpy as np
import pytest

from automaton import Triplet, build_switcher, find_accepting_fragment
from errors import (OutOfDomainError, ParseError, PreconditionError,
                    UnrealizableTripletError, ValidationError)
from workspace import (BoxRegion, inscribed_box_around, parse_workspace, ra_task_of_triplet,
                       subtract, union_volume)

TILED = {
    "dimension": 2,
    "bounds": {"lower": [0.0, 0.0], "upper": [2.0, 1.0]},
    "default_proposition": "free",
    "regions": [
        {"proposition": "a", "lower": [0.0, 0.0], "upper": [1.0, 1.0]},
        {"proposition": "b", "lower": [1.0, 0.0], "upper": [2.0, 1.0]},
    ],
}


class TestBoxes:

    def test_empty_box_is_rejected(self):
        with pytest.raises(ValidationError):
            BoxRegion((0.0, 1.0), (1.0, 1.0))

    def test_subtract_covers_the_difference(self):
        outer = BoxRegion((0.0, 0.0), (4.0, 4.0))
        hole = BoxRegion((1.0, 1.0), (2.0, 3.0))
        pieces = subtract(outer, hole)
        assert union_volume(pieces) == pytest.approx(outer.volume() - hole.volume())
        assert not any(p.interior_intersects(hole) for p in pieces)

    def test_disjoint_subtract_is_identity(self):
        a = BoxRegion((0.0,), (1.0,))
        assert subtract(a, BoxRegion((2.0,), (3.0,))) == [a]

    def test_clearance_sign(self):
        a = BoxRegion((0.0, 0.0), (1.0, 1.0))
        assert a.clearance(BoxRegion((1.5, 0.0), (2.0, 1.0))) == pytest.approx(0.5)
        assert a.clearance(BoxRegion((0.5, 0.5), (2.0, 2.0))) < 0

    def test_inscribed_box(self):
        box = inscribed_box_around((1.0, 0.5), BoxRegion((0.0, 0.0), (4.0, 4.0)))
        assert box.lower == (0.0, 0.0)
        assert box.upper == (2.0, 1.0)
        with pytest.raises(PreconditionError):
            inscribed_box_around((0.0, 1.0), BoxRegion((0.0, 0.0), (4.0, 4.0)))


class TestLabeling:

    def test_labels(self, plane_workspace):
        assert plane_workspace.label_of((1.5, 1.5)) == "a"
        assert plane_workspace.label_of((5.0, 7.0)) == "wall"
        assert plane_workspace.label_of((5.0, 2.0)) == "free"
        assert plane_workspace.alphabet == {"a", "b", "wall", "free"}

    def test_shared_boundary_goes_to_smallest_proposition(self):
        ws = parse_workspace(json.dumps(TILED))
        assert ws.label_of((1.0, 0.5)) == "a"
        assert ws.label_of((1.5, 0.5)) == "b"

    def test_outside_bounds(self, plane_workspace):
        with pytest.raises(OutOfDomainError):
            plane_workspace.label_of((10.5, 1.0))
        with pytest.raises(OutOfDomainError):
            plane_workspace.label_of((1.0, 1.0, 1.0))

    def test_default_region_is_the_complement(self, plane_workspace):
        free = plane_workspace.preimage("free")
        assert union_volume(free) == pytest.approx(94.0)
        assert all(plane_workspace.label_of(b.center) == "free" for b in free)

    def test_empty_label_has_empty_preimage(self, plane_workspace):
        assert plane_workspace.preimage("") == []
        with pytest.raises(ValidationError):
            plane_workspace.preimage("nowhere")

    def test_random_points_agree_with_preimages(self, plane_workspace):
        rng = np.random.default_rng(5)
        for point in rng.uniform(0.0, 10.0, size=(200, 2)):
            label = plane_workspace.label_of(point)
            assert any(b.contains(point) for b in plane_workspace.preimage(label))


class TestWorkspaceParsing:

    def test_overlapping_regions(self):
        doc = dict(TILED, regions=[{"proposition": "a", "lower": [0.0, 0.0], "upper": [1.2, 1.0]},
                                   {"proposition": "b", "lower": [1.0, 0.0], "upper": [2.0, 1.0]}])
        with pytest.raises(ValidationError) as exc:
            parse_workspace(json.dumps(doc))
        assert exc.value.offender == "a/b"

    def test_region_outside_bounds(self):
        doc = dict(TILED, regions=[{"proposition": "a", "lower": [0.0, 0.0], "upper": [3.0, 1.0]}])
        with pytest.raises(ValidationError):
            parse_workspace(json.dumps(doc))

    def test_default_proposition_cannot_own_a_region(self):
        doc = dict(TILED, regions=[{"proposition": "free", "lower": [0.0, 0.0], "upper": [1.0, 1.0]}])
        with pytest.raises(ValidationError):
            parse_workspace(json.dumps(doc))

    def test_wrong_vector_length(self):
        doc = dict(TILED, bounds={"lower": [0.0], "upper": [2.0, 1.0]})
        with pytest.raises(ParseError):
            parse_workspace(json.dumps(doc))


class TestReachAvoidTasks:

    def test_manipulator_tasks(self, manipulator_nba, manipulator_workspace):
        switcher = build_switcher(manipulator_nba, find_accepting_fragment(manipulator_nba, "p1"))
        first, second = switcher.triplets[:2]
        task = ra_task_of_triplet(first, manipulator_workspace)
        assert task.initial_set == manipulator_workspace.regions["p1"]
        assert task.target_set == manipulator_workspace.regions["p2"]
        assert task.unsafe_set == manipulator_workspace.regions["p0"]
        back = ra_task_of_triplet(second, manipulator_workspace)
        assert back.initial_set == manipulator_workspace.regions["p2"]
        assert back.target_set == manipulator_workspace.regions["p1"]

    def test_default_label_not_allowed_makes_free_space_unsafe(self, plane_workspace):
        t = Triplet("q0", "q1", "q2", label_in="a", label_out="b")
        task = ra_task_of_triplet(t, plane_workspace)
        assert union_volume(task.unsafe_set) == pytest.approx(94.0 + 4.0)

    def test_target_core(self, plane_workspace):
        t = Triplet("q0", "q1", "q2", label_in="a", label_out="b", label_self="free", self_labels=("free",))
        task = ra_task_of_triplet(t, plane_workspace)
        assert task.in_target((7.05, 1.5))
        assert not task.in_target((7.05, 1.5), core=0.5)
        assert task.in_target((7.5, 1.5), core=0.5)

    def test_target_core_keeps_dimensions_spanning_the_bounds(self, omni_workspace):
        t = Triplet("q0", "qa", "qb", label_in="p0", label_out="p1", label_self="p5", self_labels=("p5",))
        task = ra_task_of_triplet(t, omni_workspace)
        guard = task.guard_region(task.target_set[0], 0.5)
        assert guard.lower == pytest.approx((1.25, 2.625, 0.0))
        assert guard.upper == pytest.approx((1.75, 2.875, 2 * math.pi))
        assert task.in_target((1.5, 2.75, 0.875), core=0.5)
        assert not task.in_target((1.1, 2.75, 0.875), core=0.5)

    def test_unknown_label(self, plane_workspace):
        with pytest.raises(ValidationError):
            ra_task_of_triplet(Triplet("q0", "q1", "q2", label_in="a", label_out="c"), plane_workspace)

    def test_empty_default_region_is_unrealizable(self):
        ws = parse_workspace(json.dumps(TILED))
        assert ws.default_region == []
        with pytest.raises(UnrealizableTripletError):
            ra_task_of_triplet(Triplet("q0", "q1", "q2", label_in="free", label_out="a"), ws)
