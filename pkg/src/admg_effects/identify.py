"""Identifying functionals for the effect of one treatment on one outcome."""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import InputError
from .fixing import (
    MARGINALIZE,
    PRIMAL,
    FixingSequence,
    FixingStep,
    fixing_sequence,
    is_fixable,
    is_intrinsic,
    is_p_fixable,
)
from .graph import Admg, Partition, ordered, partition_clm

ADJUSTMENT = "adjustment"
PRIMAL_DISTRICT = "primal_district"
SEQUENTIAL_PFIX = "sequential_pfix"
NESTED_IPW = "nested_ipw"
NOT_IDENTIFIABLE = "not_identifiable"


@dataclass(frozen=True)
class RhoSpec:
    """Recipe for one rebalancing weight: the district kernel ``q_D``
    (reached by ``sequence`` on the complement of ``district``) divided by
    the product of ``p(D_i | mp(D_i))`` over ``denominators``."""

    district: tuple
    sequence: FixingSequence
    denominators: tuple  # ((vertex, pillow tuple), ...)


@dataclass(frozen=True)
class NestedPlan:
    graph: Admg
    tau: tuple
    y_star: frozenset
    d_star: tuple
    rho_specs: tuple
    failed: tuple | None = None

    @property
    def ok(self):
        return self.failed is None

    @property
    def p_dagger_note(self):
        if not self.rho_specs:
            return "p+(V) = p(V)"
        parts = [f"rho_{{{','.join(r.district)}}}" for r in self.rho_specs]
        return "p+(V) = p(V) * " + " * ".join(parts)


@dataclass(frozen=True)
class IdFunctional:
    kind: str
    t: str
    y: str
    graph: Admg
    tau: tuple = ()
    partition: Partition | None = None
    front: FixingSequence | None = None
    nested: NestedPlan | None = None
    witness: tuple | None = None

    @property
    def identified(self):
        return self.kind != NOT_IDENTIFIABLE

    @property
    def rendered(self):
        return render_functional(self)

    def final_graph(self):
        """CADMG in which the treatment is finally fixed (after any front set)."""
        return self.front.apply(self.graph) if self.front else self.graph

    def to_dict(self):
        out = {"kind": self.kind, "treatment": self.t, "outcome": self.y}
        out["restricted_to"] = list(self.graph.random)
        if self.kind == NOT_IDENTIFIABLE:
            out["witness"] = list(self.witness) if self.witness else None
            return out
        out["order"] = list(self.tau)
        g = self.final_graph()
        out["treatment_pillow"] = ordered(g.markov_pillow(self.tau_final, self.t), self.tau_final)
        if self.partition is not None:
            out["partition"] = {
                "C": ordered(self.partition.c_set, self.tau_final),
                "L": ordered(self.partition.l_set, self.tau_final),
                "M": ordered(self.partition.m_set, self.tau_final),
            }
        if self.front is not None:
            out["front"] = [str(s) for s in self.front]
        if self.nested is not None:
            out["y_star"] = ordered(self.nested.y_star, self.tau)
            out["d_star"] = [list(d) for d in self.nested.d_star]
            out["rho"] = [
                {
                    "district": list(r.district),
                    "fixing_sequence": [str(s) for s in r.sequence],
                    "denominators": [
                        {"vertex": v, "given": list(mp)} for v, mp in r.denominators
                    ],
                }
                for r in self.nested.rho_specs
            ]
        out["rendered"] = self.rendered
        return out

    @property
    def tau_final(self):
        if self.front is None:
            return self.tau
        return tuple(v for v in self.tau if v not in self.front.vertices)


def restrict_to_ancestors(g: Admg, y) -> Admg:
    """Subgraph over the ancestors of ``y`` (context vertices included)."""
    keep = g.ancestors({y}) | frozenset(g.context)
    return g.induced(keep)


def _check_pair(g, t, y):
    for v in (t, y):
        if v not in g.random:
            raise InputError(f"{v!r} is not a random vertex of the graph")
    if t == y:
        raise InputError("treatment and outcome must differ")


def y_star(g: Admg, t, y) -> frozenset:
    """Ancestors of ``y`` once ``t`` is removed from the graph."""
    _check_pair(g, t, y)
    return g.without({t}).ancestors({y}) & frozenset(g.random)


def _nested_order(g, t, y, ys):
    # Kahn where a vertex of Y* waits until its non-descendants outside Y*
    # are placed; vertices outside Y* (and their ancestors) go first.
    an_y = g.ancestors({y})
    ctx = frozenset(g.context)
    placed, out = set(ctx), []
    remaining = set(g.random)
    outside = {v: (frozenset(g.random) - g.descendants({v})) - ys for v in ys}
    while remaining:
        avail = [v for v in remaining if g.parents(v) <= placed]
        pending = [w for w in remaining if w not in ys]
        anc = g.ancestors(pending) if pending else frozenset()

        def key(v):
            blocked = v in ys and bool(outside[v] & remaining)
            urgent = v not in ys or v in anc
            return (blocked, not urgent, v not in an_y, v)

        v = min(avail, key=key)
        out.append(v)
        placed.add(v)
        remaining.remove(v)
    return tuple(out)


def nested_ipw_plan(g: Admg, t, y) -> NestedPlan:
    """Rebalancing plan for nested IPW; ``plan.failed`` names a
    non-intrinsic district when the effect is not identified."""
    _check_pair(g, t, y)
    g = restrict_to_ancestors(g, y)
    ys = y_star(g, t, y)
    d_t = g.district(t)
    tau = _nested_order(g, t, y, ys)
    d_star = tuple(
        tuple(ordered(d, tau)) for d in g.induced(ys | frozenset(g.context)).districts() if d & d_t
    )
    specs = []
    for d in d_star:
        if not is_intrinsic(g, d):
            return NestedPlan(g, tau, ys, d_star, tuple(specs), failed=d)
        seq = fixing_sequence(g, frozenset(g.random) - frozenset(d))
        dens = tuple((v, tuple(ordered(g.markov_pillow(tau, v), tau + g.context))) for v in d)
        specs.append(RhoSpec(d, seq, dens))
    return NestedPlan(g, tau, ys, d_star, tuple(specs))


def find_front_set(g: Admg, t, y):
    """Primal fixing sequence after which ``t`` is p-fixable, or None.

    Candidates outside ``Y* ∪ {t}`` are tried in reverse topological order,
    repeatedly, accepting any that is currently p-fixable.
    """
    ys = y_star(g, t, y)
    tau = g.topological_order(t, y)
    pool = [v for v in reversed(tau) if v not in ys and v != t]
    steps = []
    changed = True
    while changed and pool:
        changed = False
        for v in list(pool):
            if not is_p_fixable(g, v):
                continue
            steps.append(FixingStep(v, PRIMAL))
            g = g.with_fixed(v)
            pool.remove(v)
            changed = True
            if is_p_fixable(g, t):
                return FixingSequence(tuple(steps))
    return None


def identify(g: Admg, t, y) -> IdFunctional:
    """Pick the simplest identifying functional for the effect of ``t`` on ``y``."""
    _check_pair(g, t, y)
    if y not in g.descendants({t}):
        raise InputError(f"{y} is not a descendant of {t}; the effect is the mean of {y}")
    h = restrict_to_ancestors(g, y)
    tau = h.topological_order(t, y)
    if is_fixable(h, t):
        return IdFunctional(ADJUSTMENT, t, y, h, tau, partition_clm(h, tau, t))
    if is_p_fixable(h, t):
        return IdFunctional(PRIMAL_DISTRICT, t, y, h, tau, partition_clm(h, tau, t))
    front = find_front_set(h, t, y)
    if front is not None:
        hz = front.apply(h)
        tz = tuple(v for v in tau if v in hz.random)
        return IdFunctional(SEQUENTIAL_PFIX, t, y, h, tau, partition_clm(hz, tz, t), front=front)
    plan = nested_ipw_plan(h, t, y)
    if not plan.ok:
        return IdFunctional(NOT_IDENTIFIABLE, t, y, h, plan.tau, nested=plan, witness=plan.failed)
    return IdFunctional(NESTED_IPW, t, y, h, plan.tau, nested=plan)


# ----------------------------------------------------------------- rendering


def _factor(v, given, t=None, at_t=False, name="p"):
    given = [f"{t}=t" if at_t and u == t else u for u in given]
    return f"{name}({v} | {', '.join(given)})" if given else f"{name}({v})"


def _district_formula(g, tau, t, y, kernel="p"):
    ctx = g.context
    part = partition_clm(g, tau, t)
    order = tuple(tau) + tuple(ctx)
    outside, inside = [], []
    for v in tau:
        if v == t:
            continue
        mp = ordered(g.markov_pillow(tau, v), order)
        if v in part.l_set:
            inside.append(_factor(v, mp, name=kernel))
        else:
            outside.append(_factor(v, mp, t, at_t=v in part.m_set, name=kernel))
    inside.insert(0, _factor(t, ordered(g.markov_pillow(tau, t), order), name=kernel))
    summed = [v for v in tau if v != t]
    return (
        f"sum_{{{','.join(summed)}}} {y} * "
        + " * ".join(outside + [f"[sum_{t} " + " * ".join(inside) + "]"])
    )


def render_functional(f: IdFunctional) -> str:
    """Deterministic text form of the identifying functional."""
    head = f"# restricted to ancestors of {f.y}: {', '.join(f.graph.random)}"
    if f.kind == NOT_IDENTIFIABLE:
        return f"{head}\nnot identifiable: district {{{', '.join(f.witness)}}} is not intrinsic"
    if f.kind == ADJUSTMENT:
        mp = ordered(f.graph.markov_pillow(f.tau, f.t), f.tau + f.graph.context)
        inner = ", ".join([f"{f.t}=t"] + list(mp))
        return f"{head}\nE[E[{f.y} | {inner}]]"
    if f.kind == PRIMAL_DISTRICT:
        return f"{head}\n{_district_formula(f.graph, f.tau, f.t, f.y)}"
    if f.kind == SEQUENTIAL_PFIX:
        lines = [head]
        g = f.graph
        for step in f.front:
            lines.append(f"q <- primal fix {step.vertex} (divide q by the nested propensity of {step.vertex})")
            g = g.with_fixed(step.vertex)
        lines.append(_district_formula(g, f.tau_final, f.t, f.y, kernel="q"))
        return "\n".join(lines)
    plan = f.nested
    lines = [head, f"Y* = {{{', '.join(ordered(plan.y_star, plan.tau))}}}"]
    for r in plan.rho_specs:
        fixes = ", ".join(f"{s.vertex}:{s.kind}" for s in r.sequence)
        lines.append(f"q_{{{','.join(r.district)}}} = fix[{fixes}] p(V)")
        den = " * ".join(_factor(v, mp) for v, mp in r.denominators)
        lines.append(f"rho_{{{','.join(r.district)}}} = q_{{{','.join(r.district)}}} / ({den})")
    lines.append(plan.p_dagger_note)
    mp = ordered(plan.graph.markov_pillow(plan.tau, f.t), plan.tau)
    lines.append(f"E_p+[ I({f.t}=t) * {f.y} / {_factor(f.t, mp)} ]")
    return "\n".join(lines)
