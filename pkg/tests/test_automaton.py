import json

import numpy as np
import pytest

from automaton import (Nba, RunFragment, build_switcher, enumerate_fragments,
                       find_accepting_fragment, format_decomposition, fragment_for_any,
                       parse_nba, serialize_nba, triplets)
from errors import NoFragmentError, ParseError, StructuralError, ValidationError


def random_nba(rng):
    n_states = int(rng.integers(2, 7))
    n_props = int(rng.integers(1, 4))
    states = [f"s{i}" for i in range(n_states)]
    props = [f"p{i}" for i in range(n_props)]
    transitions = set()
    for _ in range(int(rng.integers(1, 13))):
        transitions.add((states[rng.integers(n_states)], props[rng.integers(n_props)], states[rng.integers(n_states)]))
    accepting = {s for s in states if rng.random() < 0.4} or {states[-1]}
    return Nba(frozenset(states), frozenset({states[0]}), frozenset(accepting), frozenset(props),
               frozenset(transitions))


class TestParsing:

    def test_manipulator_automaton_loads(self, manipulator_nba):
        assert manipulator_nba.states == {"q0", "q1"}
        assert manipulator_nba.initial == {"q0"}
        assert manipulator_nba.labels_between("q0", "q1") == ["p1"]
        assert manipulator_nba.self_labels("q1") == ["p3"]

    def test_malformed_json_reports_line_and_column(self):
        with pytest.raises(ParseError) as exc:
            parse_nba('{\n  "states": [\n', source="broken.json")
        assert exc.value.locus.startswith("broken.json:")

    def test_missing_field_is_parse_error(self):
        with pytest.raises(ParseError):
            parse_nba(json.dumps({"states": ["q0"], "initial": ["q0"], "accepting": []}))

    def test_undeclared_state_is_rejected(self):
        doc = {"states": ["q0"], "initial": ["q0"], "accepting": ["q0"], "propositions": ["a"],
               "transitions": [{"from": "q0", "label": "a", "to": "q9"}]}
        with pytest.raises(ValidationError) as exc:
            parse_nba(json.dumps(doc))
        assert exc.value.offender == "q9"

    def test_unlisted_proposition_is_rejected(self):
        doc = {"states": ["q0", "q1"], "initial": ["q0"], "accepting": ["q1"], "propositions": ["a"],
               "transitions": [{"from": "q0", "label": "b", "to": "q1"}]}
        with pytest.raises(ValidationError):
            parse_nba(json.dumps(doc))

    def test_empty_initial_set_is_rejected(self):
        doc = {"states": ["q0"], "initial": [], "accepting": ["q0"], "propositions": ["a"], "transitions": []}
        with pytest.raises(ValidationError):
            parse_nba(json.dumps(doc))

    def test_serialized_automaton_parses_back_equal(self, omni_nba):
        assert parse_nba(serialize_nba(omni_nba)) == omni_nba


class TestFragmentSearch:

    def test_manipulator_fragment(self, manipulator_nba):
        fragment = find_accepting_fragment(manipulator_nba, "p1")
        assert fragment.prefix == ("q0", "q1")
        assert fragment.cycle == ("q0", "q1")
        assert fragment.flattened == ("q0", "q1", "q0", "q1", "q0", "q1")

    def test_omni_fragment(self, omni_nba):
        fragment = find_accepting_fragment(omni_nba, "p0")
        assert fragment.prefix == ("q0",)
        assert fragment.cycle == ("qa", "qb", "qc", "qd")

    def test_unknown_proposition(self, manipulator_nba):
        with pytest.raises(ValidationError):
            find_accepting_fragment(manipulator_nba, "p9")

    def test_proposition_without_outgoing_initial_edge(self, manipulator_nba):
        with pytest.raises(NoFragmentError):
            find_accepting_fragment(manipulator_nba, "p0")

    def test_self_loops_only(self):
        nba = parse_nba(json.dumps({"states": ["q0"], "initial": ["q0"], "accepting": ["q0"],
                                    "propositions": ["a"],
                                    "transitions": [{"from": "q0", "label": "a", "to": "q0"}]}))
        with pytest.raises(NoFragmentError):
            find_accepting_fragment(nba, "a")
        with pytest.raises(NoFragmentError):
            fragment_for_any(nba)

    def test_fragment_for_any_picks_smallest_working_proposition(self, manipulator_nba):
        p, fragment = fragment_for_any(manipulator_nba)
        assert p == "p1"
        assert fragment.initial_proposition == "p1"

    def test_equal_length_fragments_break_ties_lexicographically(self):
        doc = {"states": ["a", "b", "c", "z"], "initial": ["a"], "accepting": ["c"], "propositions": ["x"],
               "transitions": [{"from": "a", "label": "x", "to": "b"}, {"from": "b", "label": "x", "to": "c"},
                               {"from": "a", "label": "x", "to": "z"}, {"from": "z", "label": "x", "to": "c"},
                               {"from": "c", "label": "x", "to": "a"}]}
        fragment = find_accepting_fragment(parse_nba(json.dumps(doc)), "x")
        assert fragment.prefix == ("a", "b")
        assert fragment.cycle == ("c", "a", "b")

    def test_random_automata_match_exhaustive_search(self):
        rng = np.random.default_rng(2024)
        for _ in range(50):
            nba = random_nba(rng)
            enumerated = enumerate_fragments(nba, max_prefix=8, max_cycle=6)
            for p in sorted(nba.alphabet):
                candidates = [f for f in enumerated if f.initial_proposition == p]
                if not candidates:
                    with pytest.raises(NoFragmentError):
                        find_accepting_fragment(nba, p)
                    continue
                found = find_accepting_fragment(nba, p)
                assert found in enumerated
                assert found.key == min(f.key for f in candidates)
            for fragment in enumerated:
                trips, cycle_start = triplets(nba, fragment)
                assert len(trips) == len(fragment.flattened) - 2
                assert cycle_start == len(fragment.prefix)
                for a, b in zip(trips, trips[1:]):
                    assert a.states[1:] == b.states[:2]


class TestTriplets:

    def test_manipulator_triplets(self, manipulator_nba):
        fragment = find_accepting_fragment(manipulator_nba, "p1")
        trips, cycle_start = triplets(manipulator_nba, fragment)
        assert [t.states for t in trips] == [("q0", "q1", "q0"), ("q1", "q0", "q1"),
                                             ("q0", "q1", "q0"), ("q1", "q0", "q1")]
        assert cycle_start == 2
        assert (trips[0].label_in, trips[0].label_out, trips[0].label_self) == ("p1", "p2", "p3")
        assert (trips[1].label_in, trips[1].label_out) == ("p2", "p1")

    def test_omni_triplet_order(self, omni_nba):
        fragment = find_accepting_fragment(omni_nba, "p0")
        trips, cycle_start = triplets(omni_nba, fragment)
        assert [(t.label_in, t.label_out) for t in trips] == [("p0", "p1"), ("p1", "p3"), ("p3", "p2"),
                                                              ("p2", "p3"), ("p3", "p1")]
        assert cycle_start == 1

    def test_inconsistent_fragment_is_structural_error(self, manipulator_nba):
        with pytest.raises(StructuralError):
            triplets(manipulator_nba, RunFragment(("q1",), ("q1", "q0"), "p1"))


class TestSwitcher:

    def test_manipulator_switcher(self, manipulator_nba):
        fragment = find_accepting_fragment(manipulator_nba, "p1")
        switcher = build_switcher(manipulator_nba, fragment)
        assert switcher.initial_states == ("q0",)
        assert len(switcher.triplets) == 4
        assert len(switcher.distinct_triplets()) == 2
        assert switcher.next_index(3) == 2
        assert switcher.next_index(0) == 1
        assert ("q0", "p1", ("q0", "q1", "q0")) in switcher.transitions

    def test_unused_initial_state_is_left_out(self, caplog):
        nba = parse_nba(json.dumps({
            "states": ["q0", "q1", "q9"], "initial": ["q0", "q9"], "accepting": ["q0"],
            "propositions": ["a", "b"],
            "transitions": [{"from": "q0", "label": "a", "to": "q1"}, {"from": "q1", "label": "b", "to": "q0"}],
        }))
        with caplog.at_level("INFO", logger="automaton"):
            switcher = build_switcher(nba, find_accepting_fragment(nba, "a"))
        assert switcher.initial_states == ("q0",)
        assert "q9" not in switcher.states
        assert "Initial state q9 begins no triplet" in caplog.text

    def test_cycle_wraps_onto_first_cyclic_triplet(self, omni_nba):
        switcher = build_switcher(omni_nba, find_accepting_fragment(omni_nba, "p0"))
        order = [0]
        for _ in range(9):
            order.append(switcher.next_index(order[-1]))
        assert order == [0, 1, 2, 3, 4, 1, 2, 3, 4, 1]

    def test_decomposition_listing_is_stable(self, manipulator_nba):
        fragment = find_accepting_fragment(manipulator_nba, "p1")
        switcher = build_switcher(manipulator_nba, fragment)
        text = format_decomposition("p1", fragment, switcher)
        assert text == format_decomposition("p1", fragment, build_switcher(manipulator_nba, fragment))
        assert "triplets (4, 2 distinct)" in text
        assert "prefix: q0 q1" in text
