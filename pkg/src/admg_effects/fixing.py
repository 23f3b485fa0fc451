"""Fixability criteria, fixing sequences, reachable closures and the
nonparametric-saturation check."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

from .errors import InputError, PreconditionError
from .graph import Admg, ordered

ORDINARY = "ordinary"
PRIMAL = "primal"
MARGINALIZE = "marginalize"


@dataclass(frozen=True)
class FixingStep:
    vertex: str
    kind: str

    def __str__(self):
        return f"{self.vertex}:{self.kind}"


@dataclass(frozen=True)
class FixingSequence:
    """Ordered fixing steps, each valid in the graph left by its predecessors."""

    steps: tuple = ()

    @property
    def vertices(self):
        return tuple(s.vertex for s in self.steps)

    def __len__(self):
        return len(self.steps)

    def __iter__(self):
        return iter(self.steps)

    def apply(self, g: Admg) -> Admg:
        for step in self.steps:
            g = fix(g, step.vertex, kind=PRIMAL if step.kind == PRIMAL else ORDINARY)
        return g


@dataclass(frozen=True)
class NpsVerdict:
    saturated: bool
    witness: tuple | None = None

    def __bool__(self):
        return self.saturated


def _random(g, v):
    if v not in g.random:
        raise InputError(f"{v!r} is not a random vertex of the graph")


def is_fixable(g: Admg, v) -> bool:
    """``v`` shares its district with none of its proper descendants."""
    _random(g, v)
    return g.district(v) & g.descendants(v) == {v}


is_a_fixable = is_fixable


def is_p_fixable(g: Admg, v) -> bool:
    """No child of ``v`` lies in the district of ``v``."""
    _random(g, v)
    return not (g.district(v) & g.children(v))


def is_childless(g: Admg, v) -> bool:
    return not (g.children(v) & frozenset(g.random))


def fix(g: Admg, v, kind=ORDINARY) -> Admg:
    """Fix ``v``: it becomes context, losing incoming and bidirected edges.

    ``kind`` selects the criterion checked beforehand ("ordinary" or
    "primal"); the graph operation is the same.
    """
    _random(g, v)
    if kind == PRIMAL:
        bad = g.district(v) & g.children(v)
        if bad:
            raise PreconditionError(
                f"{v} is not primal fixable: children {ordered(bad)} share its district",
                witness=frozenset(bad),
            )
    elif kind == ORDINARY:
        bad = (g.district(v) & g.descendants(v)) - {v}
        if bad:
            raise PreconditionError(
                f"{v} is not fixable: descendants {ordered(bad)} share its district",
                witness=frozenset(bad),
            )
    else:
        raise InputError(f"unknown fixing kind {kind!r}")
    return g.with_fixed(v)


def _greedy_sequence(g, s, criterion, kind):
    s = frozenset(s)
    for v in s:
        _random(g, v)
    steps = []
    remaining = set(s)
    while remaining:
        candidates = sorted(v for v in remaining if criterion(g, v))
        if not candidates:
            return None, g
        childless = [v for v in candidates if is_childless(g, v)]
        v = childless[0] if childless else candidates[0]
        steps.append(FixingStep(v, MARGINALIZE if childless else kind))
        g = g.with_fixed(v)
        remaining.remove(v)
    return FixingSequence(tuple(steps)), g


def fixing_sequence(g: Admg, s):
    """A valid ordinary fixing sequence for ``s``, or None.

    Fixability only improves as other vertices are fixed, so the greedy
    search is complete.  Childless vertices are fixed first and tagged as
    marginalizations.
    """
    return _greedy_sequence(g, s, is_fixable, ORDINARY)[0]


def p_fixable_sequence(g: Admg, s):
    """A valid primal fixing sequence for ``s``, or None."""
    return _greedy_sequence(g, s, is_p_fixable, PRIMAL)[0]


def fix_set(g: Admg, s) -> Admg:
    seq, out = _greedy_sequence(g, s, is_fixable, ORDINARY)
    if seq is None:
        raise PreconditionError(f"{ordered(s)} is not a fixable set", witness=frozenset(s))
    return out


def closure_with_graph(g: Admg, s, order=None):
    """Reachable closure of ``s`` together with the CADMG left after fixing.

    ``order`` optionally overrides the order in which candidates are tried;
    the result does not depend on it.
    """
    s = frozenset(s)
    for v in s:
        _random(g, v)
    while True:
        pool = [v for v in (order or sorted(g.random)) if v in g.random and v not in s]
        for v in pool:
            if is_fixable(g, v):
                g = g.with_fixed(v)
                break
        else:
            return frozenset(g.random), g


def reachable_closure(g: Admg, s, order=None) -> frozenset:
    """Smallest superset of ``s`` whose complement can be fixed."""
    return closure_with_graph(g, s, order)[0]


def is_intrinsic(g: Admg, s) -> bool:
    s = frozenset(s)
    if not s:
        raise InputError("intrinsic sets are nonempty")
    for v in s:
        _random(g, v)
    seq, fixed = _greedy_sequence(g, frozenset(g.random) - s, is_fixable, ORDINARY)
    if seq is None:
        return False
    return len(fixed.districts()) == 1


def _closure_parents(g, closure):
    out = set()
    for v in closure:
        out |= g._pa[v]
    return out


def _pair_connected(g, a, b, connectivity):
    closure, fixed = closure_with_graph(g, {a, b})
    if connectivity == "fixed":
        return fixed.is_bidirected_connected(closure)
    if connectivity == "original":
        # connectivity through any bidirected path of the input graph
        return g.district(a) == g.district(b) and closure <= g.district(a)
    raise InputError(f"unknown connectivity mode {connectivity!r}")


def check_nps(g: Admg, connectivity="fixed") -> NpsVerdict:
    """Decide whether the model of ``g`` is nonparametric saturated.

    Every pair must either have one vertex among the parents of the other's
    reachable closure, or a bidirected-connected joint closure.  On failure
    the first offending pair is returned as witness.
    """
    closures = {v: reachable_closure(g, {v}) for v in g.random}
    for a, b in combinations(sorted(g.random), 2):
        if a in _closure_parents(g, closures[b]):
            continue
        if b in _closure_parents(g, closures[a]):
            continue
        if _pair_connected(g, a, b, connectivity):
            continue
        return NpsVerdict(False, (a, b))
    return NpsVerdict(True, None)


def maximal_arid_projection(g: Admg, connectivity="fixed") -> Admg:
    """Arid graph with ``a -> b`` when ``a`` parents the closure of ``b`` and
    ``a <-> b`` when neither directed rule fires but the joint closure is
    bidirected connected."""
    directed, bidirected = set(), set()
    for b in g.random:
        closure, _ = closure_with_graph(g, {b})
        for a in _closure_parents(g, closure):
            if a != b:
                directed.add((a, b))
    for a, b in combinations(sorted(g.random), 2):
        if (a, b) in directed or (b, a) in directed:
            continue
        if _pair_connected(g, a, b, connectivity):
            bidirected.add((a, b))
    return Admg(random=g.random, context=g.context, directed=directed, bidirected=bidirected)


def is_complete(g: Admg) -> bool:
    return all(g.adjacent(a, b) for a, b in combinations(g.random, 2))


def is_mb_shielded(g: Admg) -> bool:
    """Nonadjacent pairs never appear in each other's Markov blanket."""
    blankets = {v: g.markov_blanket(v) for v in g.random}
    for a, b in combinations(g.random, 2):
        if g.adjacent(a, b):
            continue
        if a in blankets[b] or b in blankets[a]:
            return False
    return True
