"""Acyclic directed mixed graphs (ADMGs) and their conditional variants.

A graph holds *random* vertices and *context* (fixed) vertices.  Context
vertices only emit directed edges.  Graphs are immutable: every
transformation returns a new object.

Set-valued queries return ``frozenset``; use :func:`ordered` to obtain a
reproducible tuple.
"""

from __future__ import annotations

import heapq
from collections import deque
from dataclasses import dataclass
from functools import cached_property
from itertools import combinations
from typing import Iterable, Sequence

from .errors import InputError, StructuralError

_RELATIONS = ("parents", "children", "ancestors", "descendants")


def _check_name(name):
    if not isinstance(name, str) or not name:
        raise InputError(f"invalid vertex name {name!r}")
    if any(ch.isspace() for ch in name) or "->" in name or "#" in name:
        raise InputError(f"invalid vertex name {name!r}")


def _bi(a, b):
    return (a, b) if a <= b else (b, a)


def ordered(vertices: Iterable[str], order: Sequence[str] | None = None):
    """Return ``vertices`` as a tuple sorted by position in ``order``.

    Vertices missing from ``order`` (or all of them, when ``order`` is None)
    are placed after the ordered ones, lexicographically.
    """
    if order is None:
        return tuple(sorted(vertices))
    pos = {v: i for i, v in enumerate(order)}
    return tuple(sorted(vertices, key=lambda v: (pos.get(v, len(pos)), v)))


@dataclass(frozen=True)
class Admg:
    """A conditional ADMG over random vertices ``random`` and context ``context``.

    ``directed`` holds ``(tail, head)`` pairs, ``bidirected`` holds
    lexicographically sorted pairs.  A pair may carry both a directed and a
    bidirected edge.
    """

    random: tuple
    context: tuple = ()
    directed: frozenset = frozenset()
    bidirected: frozenset = frozenset()

    def __init__(self, random=(), directed=(), bidirected=(), context=()):
        random = tuple(random)
        context = tuple(context)
        for v in random + context:
            _check_name(v)
        seen = set()
        for v in random + context:
            if v in seen:
                raise InputError(f"duplicate vertex {v!r}")
            seen.add(v)
        di = set()
        for a, b in directed:
            if a not in seen or b not in seen:
                raise InputError(f"edge {a} -> {b} uses an undeclared vertex")
            if a == b:
                raise InputError(f"self-loop on {a!r}")
            if b in context:
                raise InputError(f"context vertex {b!r} cannot have incoming edges")
            di.add((a, b))
        bi = set()
        for a, b in bidirected:
            if a not in seen or b not in seen:
                raise InputError(f"edge {a} <-> {b} uses an undeclared vertex")
            if a == b:
                raise InputError(f"self-loop on {a!r}")
            if a in context or b in context:
                raise InputError("context vertices cannot carry bidirected edges")
            bi.add(_bi(a, b))
        object.__setattr__(self, "random", random)
        object.__setattr__(self, "context", context)
        object.__setattr__(self, "directed", frozenset(di))
        object.__setattr__(self, "bidirected", frozenset(bi))
        self._kahn(lambda v: v)

    # ------------------------------------------------------------------ basics

    @property
    def vertices(self):
        return self.random + self.context

    @cached_property
    def _vertex_set(self):
        return frozenset(self.vertices)

    @cached_property
    def _pa(self):
        out = {v: set() for v in self.vertices}
        for a, b in self.directed:
            out[b].add(a)
        return {v: frozenset(s) for v, s in out.items()}

    @cached_property
    def _ch(self):
        out = {v: set() for v in self.vertices}
        for a, b in self.directed:
            out[a].add(b)
        return {v: frozenset(s) for v, s in out.items()}

    @cached_property
    def _sib(self):
        out = {v: set() for v in self.vertices}
        for a, b in self.bidirected:
            out[a].add(b)
            out[b].add(a)
        return {v: frozenset(s) for v, s in out.items()}

    def _require(self, vertices, random_only=False):
        pool = frozenset(self.random) if random_only else self._vertex_set
        for v in vertices:
            if v not in pool:
                kind = "random vertex" if random_only else "vertex"
                raise InputError(f"unknown {kind} {v!r}")

    def _as_set(self, s):
        if isinstance(s, str):
            return frozenset([s])
        return frozenset(s)

    def is_random(self, v):
        return v in self.random

    def parents(self, s):
        """Parents of the set ``s``, excluding members of ``s``."""
        s = self._as_set(s)
        self._require(s)
        return frozenset().union(*(self._pa[v] for v in s)) - s

    def children(self, s):
        """Children of the set ``s``, excluding members of ``s``."""
        s = self._as_set(s)
        self._require(s)
        return frozenset().union(*(self._ch[v] for v in s)) - s

    def siblings(self, v):
        self._require([v])
        return self._sib[v]

    def _closure(self, s, step):
        s = self._as_set(s)
        self._require(s)
        seen = set(s)
        queue = deque(s)
        while queue:
            for w in step[queue.popleft()]:
                if w not in seen:
                    seen.add(w)
                    queue.append(w)
        return frozenset(seen)

    def ancestors(self, s):
        """Ancestors of ``s``; the set itself is included."""
        return self._closure(s, self._pa)

    def descendants(self, s):
        """Descendants of ``s``; the set itself is included."""
        return self._closure(s, self._ch)

    def genealogy(self, s, rel):
        if rel not in _RELATIONS:
            raise InputError(f"unknown relation {rel!r}; expected one of {_RELATIONS}")
        return getattr(self, rel)(s)

    def has_directed(self, a, b):
        return (a, b) in self.directed

    def has_bidirected(self, a, b):
        return _bi(a, b) in self.bidirected

    def adjacent(self, a, b):
        return (
            self.has_directed(a, b)
            or self.has_directed(b, a)
            or self.has_bidirected(a, b)
        )

    # ------------------------------------------------------------- districts

    def district(self, v):
        """Bidirected-connected component of the random vertex ``v``."""
        self._require([v], random_only=True)
        return self._closure(v, self._sib)

    def districts(self):
        """All districts, ordered by their lexicographically smallest member."""
        remaining = set(self.random)
        out = []
        while remaining:
            v = min(remaining)
            d = self.district(v)
            out.append(d)
            remaining -= d
        return sorted(out, key=min)

    def is_bidirected_connected(self, s):
        """True if ``s`` is connected using bidirected edges inside ``s`` only."""
        s = frozenset(s)
        if not s:
            return False
        return self.induced(s & frozenset(self.random)).district(min(s)) == s

    def markov_blanket(self, v):
        """District of ``v`` plus the parents of that district, minus ``v``."""
        if v in self.context:
            raise InputError(f"{v!r} is a context vertex; it has no Markov blanket")
        d = self.district(v)
        return (d | self.parents(d)) - {v}

    # ------------------------------------------------------------- subgraphs

    def induced(self, vertices):
        """Induced subgraph on ``vertices``; context status is preserved."""
        keep = frozenset(vertices)
        self._require(keep)
        return Admg(
            random=[v for v in self.random if v in keep],
            context=[v for v in self.context if v in keep],
            directed=[(a, b) for a, b in self.directed if a in keep and b in keep],
            bidirected=[(a, b) for a, b in self.bidirected if a in keep and b in keep],
        )

    def without(self, vertices):
        return self.induced(self._vertex_set - frozenset(vertices))

    def with_fixed(self, v):
        """Graphical fixing without any criterion check.

        ``v`` becomes a context vertex; its incoming directed edges and all
        bidirected edges touching it are removed.
        """
        self._require([v], random_only=True)
        return Admg(
            random=[u for u in self.random if u != v],
            context=self.context + (v,),
            directed=[(a, b) for a, b in self.directed if b != v],
            bidirected=[(a, b) for a, b in self.bidirected if v not in (a, b)],
        )

    # -------------------------------------------------------------- ordering

    def _kahn(self, priority):
        indeg = {v: len(self._pa[v]) for v in self.vertices}
        heap = [(priority(v), v) for v in self.vertices if indeg[v] == 0]
        heapq.heapify(heap)
        out = []
        while heap:
            _, v = heapq.heappop(heap)
            out.append(v)
            for c in sorted(self._ch[v]):
                indeg[c] -= 1
                if indeg[c] == 0:
                    heapq.heappush(heap, (priority(c), c))
        if len(out) != len(self.vertices):
            raise StructuralError("directed cycle detected")
        return out

    def topological_order(self, t=None, y=None):
        """Deterministic topological order of the random vertices.

        Non-descendants of ``t`` come first, then ancestors of ``y``; ties are
        broken lexicographically.  Either argument may be omitted.
        """
        if t is not None:
            self._require([t], random_only=True)
        if y is not None:
            self._require([y], random_only=True)
        de_t = self.descendants(t) if t is not None else frozenset()
        an_y = self.ancestors(y) if y is not None else self._vertex_set

        def key(v):
            return (v in de_t, v not in an_y, v)

        ctx = frozenset(self.context)
        return tuple(v for v in self._kahn(key) if v not in ctx)

    def is_topological(self, tau):
        tau = tuple(tau)
        if sorted(tau) != sorted(self.random):
            return False
        pos = {v: i for i, v in enumerate(tau)}
        return all(
            pos[a] < pos[b] for a, b in self.directed if a in pos and b in pos
        )

    def _prefix(self, tau, v, inclusive=True):
        tau = tuple(tau)
        if v not in tau:
            raise InputError(f"{v!r} is not in the topological order")
        i = tau.index(v)
        return tau[: i + 1] if inclusive else tau[:i]

    def markov_pillow(self, tau, v):
        """Markov blanket of ``v`` in the subgraph of ``v``, its predecessors
        under ``tau`` and all context vertices."""
        self._require([v], random_only=True)
        sub = self.induced(set(self._prefix(tau, v)) | set(self.context))
        return sub.markov_blanket(v)

    def inverse_markov_pillow(self, tau, v):
        """Vertices outside the district of ``v`` whose pillow contains ``v``."""
        self._require([v], random_only=True)
        dis = self.district(v)
        return frozenset(
            w
            for w in self.random
            if w not in dis and v in self.markov_pillow(tau, w)
        )

    # ---------------------------------------------------------- separation

    def m_separated(self, x, y, z=()):
        """m-separation of ``x`` and ``y`` given ``z``.

        Each bidirected edge is replaced by a fresh latent common parent and
        d-separation is decided on the moralized ancestral graph.
        """
        x, y, z = (self._as_set(s) for s in (x, y, z))
        self._require(x | y | z)
        if x & y or x & z or y & z:
            raise InputError("m-separation sets must be pairwise disjoint")
        if not x or not y:
            return True
        parents = {v: set(self._pa[v]) for v in self.vertices}
        for a, b in self.bidirected:
            h = ("<->", a, b)
            parents[h] = set()
            parents[a].add(h)
            parents[b].add(h)
        keep = set()
        queue = deque(x | y | z)
        while queue:
            v = queue.popleft()
            if v in keep:
                continue
            keep.add(v)
            queue.extend(parents[v])
        nbrs = {v: set() for v in keep}
        for v in keep:
            ps = list(parents[v])
            for p in ps:
                nbrs[v].add(p)
                nbrs[p].add(v)
            for a, b in combinations(ps, 2):
                nbrs[a].add(b)
                nbrs[b].add(a)
        seen = set(x)
        queue = deque(x)
        while queue:
            v = queue.popleft()
            for w in nbrs[v]:
                if w in z or w in seen:
                    continue
                if w in y:
                    return False
                seen.add(w)
                queue.append(w)
        return True

    # ------------------------------------------------------------- display

    def __repr__(self):
        return f"Admg({len(self.random)} random, {len(self.context)} context, " \
               f"{len(self.directed)} directed, {len(self.bidirected)} bidirected)"


@dataclass(frozen=True)
class Partition:
    """Pre-treatment vertices ``c_set``, the treatment's district from the
    treatment onwards ``l_set``, and everything else ``m_set``."""

    c_set: frozenset
    l_set: frozenset
    m_set: frozenset


def partition_clm(g: Admg, tau, t) -> Partition:
    tau = tuple(tau)
    before = frozenset(g._prefix(tau, t, inclusive=False))
    from_t = frozenset(tau) - before
    l_set = g.district(t) & from_t
    return Partition(before, l_set, frozenset(tau) - before - l_set)


def latent_projection(dag: Admg, hidden) -> Admg:
    """Project out the ``hidden`` vertices of a DAG.

    ``a -> b`` is kept when a directed path from ``a`` to ``b`` has all its
    interior vertices hidden; ``a <-> b`` when some hidden vertex reaches
    both through hidden-only directed paths (or a hidden vertex is a common
    parent).
    """
    hidden = frozenset(hidden)
    if dag.bidirected:
        raise InputError("latent projection expects a DAG (no bidirected edges)")
    unknown = hidden - dag._vertex_set
    if unknown:
        raise InputError(f"hidden vertices not in graph: {sorted(unknown)}")
    keep = [v for v in dag.vertices if v not in hidden]
    if hidden & frozenset(dag.context):
        raise InputError("context vertices cannot be hidden")

    def reach(start):
        # observed vertices reachable by a directed path through hidden vertices
        found, seen = set(), set()
        stack = list(dag._ch[start])
        while stack:
            v = stack.pop()
            if v in seen:
                continue
            seen.add(v)
            if v in hidden:
                stack.extend(dag._ch[v])
            else:
                found.add(v)
        return found

    directed = {(a, b) for a in keep for b in reach(a)}
    bidirected = set()
    for h in hidden:
        targets = sorted(reach(h))
        for a, b in combinations(targets, 2):
            bidirected.add((a, b))
    return Admg(
        random=[v for v in dag.random if v not in hidden],
        context=list(dag.context),
        directed=directed,
        bidirected=bidirected,
    )


# ---------------------------------------------------------------- text format


def parse_graph(text: str) -> Admg:
    """Parse the line-oriented graph format.

    ``V name`` declares a random vertex, ``F name`` a context vertex,
    ``a -> b`` and ``a <-> b`` add edges.  ``#`` starts a comment.
    """
    random, context, directed, bidirected = [], [], [], []
    declared = set()
    di_seen, bi_seen = set(), set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()

        def fail(msg):
            raise InputError(f"line {lineno}: {msg}")

        if parts[0] in ("V", "F") and len(parts) == 2:
            name = parts[1]
            try:
                _check_name(name)
            except InputError as exc:
                fail(str(exc))
            if name in declared:
                fail(f"duplicate vertex {name!r}")
            declared.add(name)
            (random if parts[0] == "V" else context).append(name)
            continue
        if len(parts) == 3 and parts[1] in ("->", "<->"):
            a, arrow, b = parts
            for v in (a, b):
                if v not in declared:
                    fail(f"undeclared vertex {v!r}")
            if a == b:
                fail("self-loop")
            if arrow == "->":
                if b in context:
                    fail(f"context vertex {b!r} cannot have incoming edges")
                if (a, b) in di_seen:
                    fail(f"duplicate edge {a} -> {b}")
                di_seen.add((a, b))
                directed.append((a, b))
            else:
                if a in context or b in context:
                    fail("context vertices cannot carry bidirected edges")
                if _bi(a, b) in bi_seen:
                    fail(f"duplicate edge {a} <-> {b}")
                bi_seen.add(_bi(a, b))
                bidirected.append((a, b))
            continue
        fail(f"cannot parse {line!r}")
    try:
        return Admg(random=random, context=context, directed=directed, bidirected=bidirected)
    except StructuralError as exc:
        raise InputError(str(exc)) from exc


def format_graph(g: Admg) -> str:
    """Canonical text form: declarations, then sorted directed and bidirected edges."""
    lines = [f"V {v}" for v in g.random] + [f"F {v}" for v in g.context]
    lines += [f"{a} -> {b}" for a, b in sorted(g.directed)]
    lines += [f"{a} <-> {b}" for a, b in sorted(g.bidirected)]
    return "\n".join(lines) + "\n"


def load_graph(path) -> Admg:
    with open(path, encoding="utf-8") as fh:
        return parse_graph(fh.read())
