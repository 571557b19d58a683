import json
import logging
from dataclasses import dataclass

import networkx as nx

from errors import ConfigError, NoFragmentError, ParseError, StructuralError, ValidationError
from utils import load_document, require_field

logger = logging.getLogger(__name__)


# ----------------------------------------
# Domain types
# ----------------------------------------
@dataclass(frozen=True)
class Nba:
    states: frozenset
    initial: frozenset
    accepting: frozenset
    alphabet: frozenset
    transitions: frozenset  # of (source, label, target)

    def labels_between(self, q, q_next):
        return sorted(label for (src, label, dst) in self.transitions if src == q and dst == q_next)

    def self_labels(self, q):
        return self.labels_between(q, q)

    def successors(self, q):
        return sorted({dst for (src, _, dst) in self.transitions if src == q and dst != q})

    def graph(self):
        """Transition graph with self-loops dropped (consecutive fragment states must differ)."""
        g = nx.DiGraph()
        g.add_nodes_from(sorted(self.states))
        for src, _, dst in sorted(self.transitions):
            if src != dst:
                g.add_edge(src, dst)
        return g


@dataclass(frozen=True)
class RunFragment:
    prefix: tuple
    cycle: tuple
    initial_proposition: str

    @property
    def flattened(self):
        return self.prefix + self.cycle + self.cycle[:2]

    @property
    def key(self):
        """Ordering used for deterministic fragment selection."""
        return (len(self.prefix), len(self.cycle), self.flattened, self.initial_proposition)


@dataclass(frozen=True)
class Triplet:
    q: str
    q_prime: str
    q_double_prime: str
    label_in: str
    label_out: str
    label_self: str = ""
    self_labels: tuple = ()

    @property
    def states(self):
        return (self.q, self.q_prime, self.q_double_prime)

    def name(self):
        return ",".join(self.states)


@dataclass(frozen=True)
class Switcher:
    states: tuple
    initial_states: tuple
    transitions: frozenset  # of (switcher state, label, switcher state)
    triplets: tuple
    cycle_start: int

    @property
    def cyclic_order(self):
        return self.triplets[self.cycle_start:]

    def next_index(self, index):
        """Triplet index that follows `index`, wrapping onto the cycle."""
        return index + 1 if index + 1 < len(self.triplets) else self.cycle_start

    def distinct_triplets(self):
        seen = []
        for t in self.triplets:
            if t.states not in [s.states for s in seen]:
                seen.append(t)
        return seen


# ----------------------------------------
# Parsing
# ----------------------------------------
def _string_list(doc, key, source):
    values = require_field(doc, key, list, source)
    for i, v in enumerate(values):
        if not isinstance(v, str):
            raise ParseError(f"'{key}' entries must be strings", locus=f"{source}:{key}[{i}]")
    return values


def parse_nba(text, source="<automaton>"):
    doc = load_document(text, source)
    states = set(_string_list(doc, "states", source))
    initial = set(_string_list(doc, "initial", source))
    accepting = set(_string_list(doc, "accepting", source))
    alphabet = set(_string_list(doc, "propositions", source))
    raw_transitions = require_field(doc, "transitions", list, source)

    transitions = set()
    for i, tr in enumerate(raw_transitions):
        if not isinstance(tr, dict):
            raise ParseError("transition must be an object", locus=f"{source}:transitions[{i}]")
        for field in ("from", "label", "to"):
            if not isinstance(tr.get(field), str):
                raise ParseError(f"transition field '{field}' missing or not a string",
                                 locus=f"{source}:transitions[{i}].{field}")
        transitions.add((tr["from"], tr["label"], tr["to"]))

    if not initial:
        raise ValidationError("automaton has an empty initial set", offender="initial")
    for name, subset in (("initial", initial), ("accepting", accepting)):
        for q in sorted(subset - states):
            raise ValidationError(f"{name} state '{q}' is not declared in states", offender=q)
    for src, label, dst in sorted(transitions):
        for q in (src, dst):
            if q not in states:
                raise ValidationError(f"transition {src}-{label}->{dst} references undeclared state '{q}'", offender=q)
        if label not in alphabet:
            raise ValidationError(f"transition {src}-{label}->{dst} uses unlisted proposition '{label}'", offender=label)

    nba = Nba(frozenset(states), frozenset(initial), frozenset(accepting), frozenset(alphabet), frozenset(transitions))
    logger.info(f"Parsed automaton {source}: {len(states)} states, {len(transitions)} transitions")
    return nba


def load_nba(path):
    try:
        with open(path, 'r', encoding='utf-8') as f:
            text = f.read()
    except FileNotFoundError as e:
        raise ConfigError(f"automaton file not found: {path}") from e
    return parse_nba(text, source=str(path))


def serialize_nba(nba):
    doc = {
        "states": sorted(nba.states),
        "initial": sorted(nba.initial),
        "accepting": sorted(nba.accepting),
        "propositions": sorted(nba.alphabet),
        "transitions": [{"from": s, "label": l, "to": d} for (s, l, d) in sorted(nba.transitions)],
    }
    return json.dumps(doc, indent=2)


# ----------------------------------------
# Fragment search
# ----------------------------------------
def _shortest_paths(g, source, target):
    try:
        return [tuple(p) for p in nx.all_shortest_paths(g, source, target)]
    except nx.NetworkXNoPath:
        return []


def _shortest_cycles(g, c0):
    """All shortest simple cycles (c0, c1, ..., c_ms) through c0."""
    best = []
    for s in sorted(g.successors(c0)):
        for path in _shortest_paths(g, s, c0):
            cycle = (c0,) + path[:-1]
            if not best or len(cycle) < len(best[0]):
                best = [cycle]
            elif len(cycle) == len(best[0]):
                best.append(cycle)
    return best


def _shortest_prefixes(nba, g, q0, c0, p):
    """All shortest prefixes from q0 whose last state steps into c0 and whose first edge carries p."""
    candidates = []
    if q0 != c0 and p in nba.labels_between(q0, c0):
        candidates.append((q0,))
    if not candidates:
        targets = sorted(g.predecessors(c0))
        for v1 in sorted(g.successors(q0)):
            if p not in nba.labels_between(q0, v1):
                continue
            for u in targets:
                for path in _shortest_paths(g, v1, u):
                    candidates.append((q0,) + path)
    if not candidates:
        return []
    shortest = min(len(c) for c in candidates)
    return [c for c in candidates if len(c) == shortest]


def find_accepting_fragment(nba, p):
    """
    Shortest accepting lasso whose first transition is labeled `p`.

    Ranking is prefix length, then cycle length, then the flattened state
    sequence in lexicographic order.
    """
    if p not in nba.alphabet:
        raise ValidationError(f"proposition '{p}' is not in the automaton alphabet", offender=p)
    g = nba.graph()
    best = None
    for c0 in sorted(nba.accepting):
        cycles = _shortest_cycles(g, c0)
        if not cycles:
            continue
        for q0 in sorted(nba.initial):
            for prefix in _shortest_prefixes(nba, g, q0, c0, p):
                for cycle in cycles:
                    candidate = RunFragment(prefix, cycle, p)
                    if best is None or candidate.key < best.key:
                        best = candidate
    if best is None:
        raise NoFragmentError(f"no fragment for proposition '{p}'")
    logger.info(f"Fragment for {p}: prefix={best.prefix} cycle={best.cycle}")
    return best


def fragment_for_any(nba):
    """First (proposition, fragment) pair in lexicographic proposition order."""
    for p in sorted(nba.alphabet):
        try:
            return p, find_accepting_fragment(nba, p)
        except NoFragmentError:
            logger.debug(f"No fragment starting with {p}")
    raise NoFragmentError("no fragment for any proposition")


def _walks(g, start, max_len):
    stack = [(start,)]
    while stack:
        walk = stack.pop()
        yield walk
        if len(walk) < max_len:
            for nxt in g.successors(walk[-1]):
                stack.append(walk + (nxt,))


def _simple_cycles_from(g, c0, max_len):
    stack = [(c0,)]
    while stack:
        path = stack.pop()
        for nxt in g.successors(path[-1]):
            if nxt == c0 and len(path) >= 2:
                yield path
            elif nxt not in path and len(path) < max_len:
                stack.append(path + (nxt,))


def enumerate_fragments(nba, max_prefix, max_cycle):
    """Exhaustive fragment set within the given prefix and cycle bounds."""
    g = nba.graph()
    fragments = set()
    cycles = {c0: list(_simple_cycles_from(g, c0, max_cycle)) for c0 in sorted(nba.accepting)}
    for q0 in sorted(nba.initial):
        for prefix in _walks(g, q0, max_prefix):
            for c0 in g.successors(prefix[-1]):
                for cycle in cycles.get(c0, []):
                    flat = prefix + cycle + cycle[:2]
                    for label in nba.labels_between(flat[0], flat[1]):
                        fragments.add(RunFragment(prefix, cycle, label))
    return fragments


# ----------------------------------------
# Triplets and the switcher
# ----------------------------------------
def _check_against(nba, fragment):
    flat = fragment.flattened
    for a, b in zip(flat, flat[1:]):
        if a == b:
            raise StructuralError(f"fragment repeats state {a} consecutively")
        if not nba.labels_between(a, b):
            raise StructuralError(f"fragment step {a}->{b} has no transition in the automaton")
    if fragment.initial_proposition not in nba.labels_between(flat[0], flat[1]):
        raise StructuralError(f"initial step {flat[0]}->{flat[1]} is not labeled {fragment.initial_proposition}")


def _edge_label(nba, fragment, a, b):
    flat = fragment.flattened
    if (a, b) == (flat[0], flat[1]):
        return fragment.initial_proposition
    return nba.labels_between(a, b)[0]


def triplets(nba, fragment):
    """Returns (triplet list, index at which the periodic cycle of triplets begins)."""
    flat = fragment.flattened
    if len(flat) < 3:
        raise StructuralError(f"fragment has {len(flat)} states, at least 3 are needed")
    _check_against(nba, fragment)
    result = []
    for i in range(len(flat) - 2):
        q, q1, q2 = flat[i:i + 3]
        loops = tuple(nba.self_labels(q1))
        result.append(Triplet(q, q1, q2,
                              label_in=_edge_label(nba, fragment, q, q1),
                              label_out=_edge_label(nba, fragment, q1, q2),
                              label_self=loops[0] if loops else "",
                              self_labels=loops))
    return result, len(fragment.prefix)


def build_switcher(nba, fragment):
    """
    Switching system over the fragment's triplets. Only initial automaton states
    that begin some triplet get an initial transition; the others are left out
    of the switcher and logged.
    """
    trips, cycle_start = triplets(nba, fragment)
    transitions = set()
    initial_states = []
    for q0 in sorted(nba.initial):
        first = next((t for t in trips if t.q == q0), None)
        if first is not None:
            initial_states.append(q0)
            transitions.add((q0, first.label_in, first.states))
        else:
            logger.info(f"Initial state {q0} begins no triplet of the fragment; left out of the switcher")
    for i, t in enumerate(trips):
        nxt = trips[i + 1] if i + 1 < len(trips) else trips[cycle_start]
        if nxt.states[:2] != t.states[1:]:
            raise StructuralError(f"triplet {t.name()} does not chain into {nxt.name()}")
        transitions.add((t.states, t.label_out, nxt.states))

    states = tuple(initial_states) + tuple(dict.fromkeys(t.states for t in trips))
    return Switcher(states, tuple(initial_states), frozenset(transitions), tuple(trips), cycle_start)


def format_decomposition(p, fragment, switcher):
    lines = [f"initial proposition: {p}",
             f"prefix: {' '.join(fragment.prefix)}",
             f"cycle: {' '.join(fragment.cycle)}",
             f"flattened: {' '.join(fragment.flattened)}",
             f"triplets ({len(switcher.triplets)}, {len(switcher.distinct_triplets())} distinct):"]
    for i, t in enumerate(switcher.triplets):
        marker = "*" if i >= switcher.cycle_start else " "
        lines.append(f" {marker}{i}: ({t.name()}) in={t.label_in} out={t.label_out} self={t.label_self or '-'}")
    lines.append(f"switcher: {len(switcher.states)} states, {len(switcher.transitions)} transitions, "
                 f"cycle starts at triplet {switcher.cycle_start}")
    return "\n".join(lines)
