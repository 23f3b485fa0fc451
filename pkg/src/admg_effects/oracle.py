"""Exact discrete models used to verify identification and estimation.

Everything here works on dense probability tables indexed by every observed
variable.  Kernels keep the full grid as well: a kernel over random vertices
``R`` given context ``W`` is a table over ``R ∪ W`` whose slices for fixed
``W`` sum to one.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import reduce
from itertools import product

import numpy as np

from .errors import InputError, PositivityError, PreconditionError
from .fixing import (
    MARGINALIZE,
    fix,
    fixing_sequence,
    is_fixable,
    is_p_fixable,
    PRIMAL,
)
from .graph import Admg, latent_projection, ordered, partition_clm

SIZE_LIMIT = 2**20


# --------------------------------------------------------------------- models


@dataclass
class DiscreteDagModel:
    """A discrete DAG over observed and hidden vertices.

    ``cpts[v]`` has one axis per parent (in ``parents[v]`` order) followed
    by an axis for ``v`` itself.
    """

    dag: Admg
    hidden: frozenset
    cards: dict
    parents: dict
    cpts: dict

    def __post_init__(self):
        if self.dag.bidirected:
            raise InputError("a discrete DAG model cannot have bidirected edges")
        self.hidden = frozenset(self.hidden)
        for v in self.dag.vertices:
            if self.cards.get(v, 0) < 2:
                raise InputError(f"vertex {v!r} needs cardinality >= 2")
            if frozenset(self.parents[v]) != self.dag.parents(v):
                raise InputError(f"parent list of {v!r} does not match the DAG")
            shape = tuple(self.cards[p] for p in self.parents[v]) + (self.cards[v],)
            cpt = np.asarray(self.cpts[v], dtype=float)
            if cpt.shape != shape:
                raise InputError(f"CPT of {v!r} has shape {cpt.shape}, expected {shape}")
            if np.any(cpt < 0) or np.max(np.abs(cpt.sum(axis=-1) - 1.0)) > 1e-12:
                raise InputError(f"CPT rows of {v!r} must be distributions")
            self.cpts[v] = cpt

    @property
    def observed(self):
        return tuple(v for v in self.dag.topological_order() if v not in self.hidden)

    def admg(self) -> Admg:
        """Latent projection of the model's DAG onto its observed vertices."""
        return latent_projection(self.dag, self.hidden)

    @classmethod
    def from_json(cls, data):
        if isinstance(data, str):
            data = json.loads(data)
        entries = data["vertices"]
        names = [e["name"] for e in entries]
        edges = [(p, e["name"]) for e in entries for p in e.get("parents", [])]
        dag = Admg(random=names, directed=edges)
        cards = {e["name"]: int(e.get("card", 2)) for e in entries}
        parents = {e["name"]: tuple(e.get("parents", [])) for e in entries}
        cpts = {}
        for e in entries:
            shape = tuple(cards[p] for p in parents[e["name"]]) + (cards[e["name"]],)
            cpts[e["name"]] = np.asarray(e["cpt"], dtype=float).reshape(shape)
        hidden = frozenset(e["name"] for e in entries if e.get("hidden", False))
        return cls(dag, hidden, cards, parents, cpts)

    def to_json(self):
        entries = []
        for v in self.dag.topological_order():
            k = self.cards[v]
            entries.append(
                {
                    "name": v,
                    "card": k,
                    "hidden": v in self.hidden,
                    "parents": list(self.parents[v]),
                    "cpt": self.cpts[v].reshape(-1, k).tolist(),
                }
            )
        return {"vertices": entries}


def load_model(path) -> DiscreteDagModel:
    with open(path, encoding="utf-8") as fh:
        return DiscreteDagModel.from_json(json.load(fh))


def random_model(rng, dag: Admg, hidden=(), card=2, low=0.05, high=0.95):
    """Random CPTs for ``dag`` with every probability inside ``[low, high]``."""
    cards = {v: card for v in dag.vertices}
    parents = {v: ordered(dag.parents(v)) for v in dag.vertices}
    cpts = {}
    for v in dag.vertices:
        shape = tuple(cards[p] for p in parents[v])
        if card == 2:
            p1 = rng.uniform(low, high, size=shape)
            cpts[v] = np.stack([1.0 - p1, p1], axis=-1)
        else:
            raw = rng.uniform(low, high, size=shape + (card,))
            cpts[v] = raw / raw.sum(axis=-1, keepdims=True)
    return DiscreteDagModel(dag, frozenset(hidden), cards, parents, cpts)


# --------------------------------------------------------------------- tables


def _axes_except(vars_, keep):
    return tuple(i for i, v in enumerate(vars_) if v not in keep)


@dataclass
class JointTable:
    """Dense joint distribution over ``vars``."""

    vars: tuple
    probs: np.ndarray

    def __post_init__(self):
        self.vars = tuple(self.vars)
        if self.probs.ndim != len(self.vars):
            raise InputError("table rank does not match variable list")
        if np.any(self.probs < 0) or abs(self.probs.sum() - 1.0) > 1e-12:
            raise InputError("joint table must be a normalized distribution")

    @property
    def cards(self):
        return dict(zip(self.vars, self.probs.shape))

    def marginal(self, keep) -> "JointTable":
        keep = [v for v in self.vars if v in set(keep)]
        probs = self.probs.sum(axis=_axes_except(self.vars, set(keep)))
        return JointTable(tuple(keep), probs)

    def as_kernel(self) -> "Kernel":
        return Kernel(self.vars, frozenset(self.vars), frozenset(), self.probs.copy())


def enumerate_joint(m: DiscreteDagModel, limit=SIZE_LIMIT) -> JointTable:
    """Exact product of CPTs over all (observed and hidden) vertices."""
    order = m.dag.topological_order()
    size = int(np.prod([m.cards[v] for v in order], dtype=float))
    if size > limit:
        raise MemoryError(f"joint table would have {size} entries (limit {limit})")
    probs = reduce(np.multiply, (_cpt_on_grid(m, v, order) for v in order))
    return JointTable(order, probs)


def _cpt_on_grid(m, v, order, clamp=None):
    # Place a CPT on the full grid, transposing parent axes into grid order.
    src = list(m.parents[v]) + [v]
    cpt = m.cpts[v]
    if clamp is not None:
        cpt = np.zeros_like(cpt)
        cpt[..., clamp] = 1.0
    perm = sorted(range(len(src)), key=lambda i: order.index(src[i]))
    arr = np.transpose(cpt, perm)
    shape = [1] * len(order)
    for i in perm:
        shape[order.index(src[i])] = m.cards[src[i]]
    return arr.reshape(shape)


def observed_joint(m: DiscreteDagModel) -> JointTable:
    return enumerate_joint(m).marginal(m.observed)


def truth_psi(m: DiscreteDagModel, t_var, t_val, y_var) -> float:
    """Mean of ``y_var`` after replacing the CPT of ``t_var`` by a point mass."""
    order = m.dag.topological_order()
    factors = (
        _cpt_on_grid(m, v, order, clamp=t_val if v == t_var else None) for v in order
    )
    probs = reduce(np.multiply, factors)
    yv = np.arange(m.cards[y_var]).reshape(
        [m.cards[y_var] if v == y_var else 1 for v in order]
    )
    return float((probs * yv).sum())


# -------------------------------------------------------------------- kernels


@dataclass
class Kernel:
    """``table`` over ``vars`` (random ∪ context) normalized over ``random``."""

    vars: tuple
    random: frozenset
    context: frozenset
    table: np.ndarray

    def normalization_error(self):
        total = self.table.sum(axis=_axes_except(self.vars, self.context))
        return float(np.max(np.abs(total - 1.0)))

    def at(self, var, val):
        """Table evaluated at ``var = val``, broadcast back to the full grid."""
        return _at(self.table, self.vars, var, val)

    def slice(self, var, val):
        return np.take(self.table, val, axis=self.vars.index(var))


def _at(arr, vars_, var, val):
    ax = vars_.index(var)
    sl = np.take(arr, [val] if arr.shape[ax] > 1 else [0], axis=ax)
    return np.broadcast_to(sl, arr.shape)


def _values(vars_, shape, var):
    ax = vars_.index(var)
    vals = np.arange(shape[ax], dtype=float)
    return np.broadcast_to(vals.reshape([-1 if i == ax else 1 for i in range(len(shape))]), shape)


class _Law:
    """Helper exposing conditionals and expectations of a full-grid table.

    ``table`` is either a joint distribution or a kernel; in the latter case
    every conditional automatically conditions on the context vertices.
    """

    def __init__(self, vars_, table, context=()):
        self.vars = tuple(vars_)
        self.table = np.asarray(table, dtype=float)
        self.shape = self.table.shape
        self.context = frozenset(context)

    def _sum_keep(self, arr, keep):
        out = arr.sum(axis=_axes_except(self.vars, keep), keepdims=True)
        return np.broadcast_to(out, self.shape)

    def cond(self, target, given):
        target = frozenset([target]) if isinstance(target, str) else frozenset(target)
        given = frozenset(given) | self.context
        num = self._sum_keep(self.table, target | given)
        den = self._sum_keep(self.table, given - target)
        if np.any(den <= 0):
            raise PositivityError(
                f"zero probability for conditioning set {ordered(given)} "
                f"while evaluating p({ordered(target)} | ...)"
            )
        return num / den

    def cond_expect(self, arr, given):
        given = frozenset(given) | self.context
        num = self._sum_keep(self.table * arr, given)
        den = self._sum_keep(self.table, given)
        if np.any(den <= 0):
            raise PositivityError(f"zero probability for conditioning set {ordered(given)}")
        return num / den

    def sum_over(self, arr, var):
        ax = self.vars.index(var)
        return np.broadcast_to(arr.sum(axis=ax, keepdims=True), self.shape)

    def at(self, arr, var, val):
        return _at(np.broadcast_to(arr, self.shape), self.vars, var, val)

    def values(self, var):
        return _values(self.vars, self.shape, var)

    def indicator(self, var, val):
        return (self.values(var) == val).astype(float)

    def expect(self, arr):
        return float((self.table * arr).sum())


def _positive(arr, what):
    if np.any(arr <= 0):
        raise PositivityError(f"{what} vanishes somewhere on the grid")
    return arr


def _law_of(q):
    if isinstance(q, JointTable):
        return _Law(q.vars, q.probs)
    if isinstance(q, Kernel):
        return _Law(q.vars, q.table, q.context)
    if isinstance(q, _Law):
        return q
    raise InputError(f"expected a JointTable or Kernel, got {type(q).__name__}")


def _check_graph_matches(q: Kernel, g: Admg):
    if frozenset(g.random) != q.random or frozenset(g.context) != q.context:
        raise InputError("graph vertices do not match the kernel's random/context split")


def kernel_fix(q: Kernel, g: Admg, v) -> Kernel:
    """Ordinary fixing: divide by ``q(v | mb(v), context)``."""
    _check_graph_matches(q, g)
    if not is_fixable(g, v):
        raise PreconditionError(f"{v} is not fixable", witness=v)
    law = _law_of(q)
    table = q.table / law.cond(v, g.markov_blanket(v))
    return Kernel(q.vars, q.random - {v}, q.context | {v}, table)


def primal_weight(q: Kernel, g: Admg, v, tau=None):
    """Nested propensity of ``v``: ``q_{D_v}(v | mb(v), context)`` on the grid."""
    _check_graph_matches(q, g)
    if not is_p_fixable(g, v):
        raise PreconditionError(f"{v} is not primal fixable", witness=v)
    tau = tuple(tau) if tau is not None else g.topological_order()
    law = _law_of(q)
    pos = tau.index(v)
    members = [u for u in g.district(v) if tau.index(u) >= pos]
    prod = reduce(
        np.multiply, (law.cond(u, g.markov_pillow(tau, u)) for u in members)
    )
    return _positive(prod / law.sum_over(prod, v), f"nested propensity of {v}")


def kernel_primal_fix(q: Kernel, g: Admg, v, tau=None) -> Kernel:
    """Primal fixing: divide by the nested propensity of ``v``."""
    table = q.table / primal_weight(q, g, v, tau)
    return Kernel(q.vars, q.random - {v}, q.context | {v}, table)


def kernel_dual_fix(q: Kernel, g: Admg, tau, v, v_val) -> Kernel:
    """Dual fixing at ``v = v_val``: reweight by the inverse-pillow density
    ratios and sum ``v`` out.  The result is constant along ``v``."""
    _check_graph_matches(q, g)
    if not is_p_fixable(g, v):
        raise PreconditionError(f"{v} is not dual fixable", witness=v)
    tau = tuple(tau)
    law = _law_of(q)
    ratio = np.ones(law.shape)
    for u in g.inverse_markov_pillow(tau, v):
        c = law.cond(u, g.markov_pillow(tau, u))
        ratio = ratio * law.at(c, v, v_val) / c
    table = law.sum_over(q.table * ratio, v).copy()
    return Kernel(q.vars, q.random - {v}, q.context | {v}, table)


def apply_fixing_sequence(q: Kernel, g: Admg, seq):
    """Run a fixing sequence on a kernel; returns the kernel and the CADMG."""
    for step in seq:
        if step.kind == PRIMAL:
            q = kernel_primal_fix(q, g, step.vertex)
            g = fix(g, step.vertex, kind=PRIMAL)
        else:
            q = kernel_fix(q, g, step.vertex)
            g = fix(g, step.vertex)
    return q, g


def district_kernel(p: JointTable, g: Admg, d) -> Kernel:
    """``q_D`` obtained by fixing everything outside ``d``."""
    seq = fixing_sequence(g, frozenset(g.random) - frozenset(d))
    if seq is None:
        raise PreconditionError(f"complement of {ordered(d)} is not fixable", witness=frozenset(d))
    q, _ = apply_fixing_sequence(p.as_kernel(), g, seq)
    return q


# ---------------------------------------------------------- exact functionals


def exact_beta_primal(law, g: Admg, tau, t, t_val, y):
    """Primal IPW weight times outcome, on the grid."""
    law = _law_of(law)
    part = partition_clm(g, tau, t)
    prod = reduce(
        np.multiply, (law.cond(v, g.markov_pillow(tau, v)) for v in part.l_set)
    )
    _positive(prod, f"p({', '.join(ordered(part.l_set, tau))} | pillows)")
    return law.indicator(t, t_val) * law.sum_over(prod, t) / prod * law.values(y)


def exact_beta_dual(law, g: Admg, tau, t, t_val, y):
    """Dual IPW weight times outcome, on the grid."""
    law = _law_of(law)
    ratio = np.ones(law.shape)
    for v in g.inverse_markov_pillow(tau, t):
        c = _positive(law.cond(v, g.markov_pillow(tau, v)), f"p({v} | pillow)")
        ratio = ratio * law.at(c, t, t_val) / c
    return ratio * law.values(y)


def exact_if_gaipw(law, g: Admg, tau, t, t_val, y):
    """Uncentered gAIPW influence function (add ``-psi`` to centre it)."""
    law = _law_of(law)
    mp = g.markov_pillow(tau, t)
    prop = _positive(law.cond(t, mp), f"p({t} | {', '.join(ordered(mp, tau))})")
    mu = law.at(law.cond_expect(law.values(y), mp | {t}), t, t_val)
    return law.indicator(t, t_val) / prop * (law.values(y) - mu) + mu


def exact_if_apipw(law, g: Admg, tau, t, t_val, y):
    """Uncentered augmented primal IPW influence function, raw sum form."""
    law = _law_of(law)
    tau = tuple(tau)
    if tau[-1] != y:
        raise InputError("the outcome must be the last vertex of the order")
    part = partition_clm(g, tau, t)
    k = tau.index(t)
    cond = {v: _positive(law.cond(v, g.markov_pillow(tau, v)), f"p({v} | pillow)") for v in tau[k:]}

    def factor(v):
        return law.at(cond[v], t, t_val) if v in part.m_set else cond[v]

    # tail[j] = sum over tau[j:] of Y times the product of their factors
    tail = [None] * (len(tau) + 1)
    tail[len(tau)] = law.values(y)
    for j in range(len(tau) - 1, k, -1):
        tail[j] = law.sum_over(factor(tau[j]) * tail[j + 1], tau[j])

    ind = law.indicator(t, t_val)
    total = tail[k + 1].copy()
    l_before = np.ones(law.shape)
    m_ratio = np.ones(law.shape)
    for j in range(k, len(tau)):
        v = tau[j]
        if v == t:
            l_before = l_before * cond[t]
            continue
        if v in part.m_set:
            a = law.sum_over(l_before * tail[j + 1], t)
            b = law.sum_over(l_before * tail[j], t)
            total = total + ind / l_before * (a - b)
            m_ratio = m_ratio * factor(v) / cond[v]
        else:
            total = total + m_ratio * (tail[j + 1] - tail[j])
            l_before = l_before * cond[v]
    return total


def exact_if_apipw_ladder(law, g: Admg, tau, t, t_val, y, baseline="dual"):
    """Uncentered augmented primal IPW influence function in its regression
    form: successive conditional expectations of the primal and dual
    weighted outcomes."""
    law = _law_of(law)
    tau = tuple(tau)
    part = partition_clm(g, tau, t)
    bp = exact_beta_primal(law, g, tau, t, t_val, y)
    bd = exact_beta_dual(law, g, tau, t, t_val, y)
    total = law.cond_expect(bd if baseline == "dual" else bp, part.c_set)
    for j, v in enumerate(tau):
        if v in part.c_set:
            continue
        beta = bp if v in part.m_set else bd
        total = total + law.cond_expect(beta, tau[: j + 1]) - law.cond_expect(beta, tau[:j])
    return total


def exact_psi_nested(p: JointTable, g: Admg, t, t_val, y, plan=None):
    """Nested IPW functional evaluated exactly."""
    from .identify import nested_ipw_plan

    if plan is None:
        plan = nested_ipw_plan(g, t, y)
    g = plan.graph
    p = p.marginal(g.random)
    law = _law_of(p)
    tau = plan.tau
    dagger = p.probs.copy()
    for d in plan.d_star:
        q = district_kernel(p, g, d)
        dagger = dagger * q.table
        for v in d:
            dagger = dagger / _positive(law.cond(v, g.markov_pillow(tau, v)), f"p({v} | pillow)")
    mp = g.markov_pillow(tau, t)
    ipw = law.indicator(t, t_val) / _positive(law.cond(t, mp), f"p({t} | pillow)") * law.values(y)
    return float((dagger * ipw).sum()), float(dagger.sum())


def exact_reweighted(p: JointTable, g: Admg, t, t_val, y, z_sequence):
    """Reweighted estimating equation solved exactly.

    Returns ``(psi, weights, cadmg)``; the weights are the stabilized inverse
    primal-fixing weights on the grid.
    """
    from .identify import restrict_to_ancestors

    g = restrict_to_ancestors(g, y)
    p = p.marginal(g.random)
    law = _law_of(p)
    q = p.as_kernel()
    weights = np.ones(law.shape)
    for z in z_sequence:
        gz = g
        pw = primal_weight(q, gz, z)
        q = Kernel(q.vars, q.random - {z}, q.context | {z}, q.table / pw)
        g = fix(g, z, kind=PRIMAL)
        weights = weights * law.cond(z, ()) / pw
    wlaw = _Law(p.vars, p.probs * weights, g.context)
    tau = g.topological_order(t, y)
    if is_fixable(g, t):
        a = exact_if_gaipw(wlaw, g, tau, t, t_val, y)
    else:
        a = exact_if_apipw(wlaw, g, tau, t, t_val, y)
    return wlaw.expect(a), weights, g


ESTIMANDS = ("beta_primal", "beta_dual", "if_gaipw", "if_apipw", "psi_nested", "reweighted_ee")


def exact_estimator_value(p: JointTable, estimand, g: Admg, t, t_val, y, z_sequence=None, psi=0.0):
    """Population value of an estimator's defining quantity.

    For the IF estimands the mean of ``IF - psi`` is returned, so the value
    is zero when ``psi`` is the identified effect.
    """
    from .identify import restrict_to_ancestors

    if estimand == "psi_nested":
        return exact_psi_nested(p, g, t, t_val, y)[0]
    if estimand == "reweighted_ee":
        return exact_reweighted(p, g, t, t_val, y, z_sequence or ())[0]
    h = restrict_to_ancestors(g, y)
    law = _law_of(p.marginal(h.random))
    tau = h.topological_order(t, y)
    if estimand == "beta_primal":
        return law.expect(exact_beta_primal(law, h, tau, t, t_val, y))
    if estimand == "beta_dual":
        return law.expect(exact_beta_dual(law, h, tau, t, t_val, y))
    if estimand == "if_gaipw":
        return law.expect(exact_if_gaipw(law, h, tau, t, t_val, y)) - psi
    if estimand == "if_apipw":
        return law.expect(exact_if_apipw(law, h, tau, t, t_val, y)) - psi
    raise InputError(f"unknown estimand {estimand!r}; expected one of {ESTIMANDS}")


def conditional_dependence(p: JointTable, x, y, z=()):
    """Largest deviation of ``p(x, y | z)`` from ``p(x | z) p(y | z)``."""
    keep = set(x) | set(y) | set(z)
    law = _law_of(p.marginal(keep))
    joint = law.cond(frozenset(x) | frozenset(y), z)
    split = law.cond(x, z) * law.cond(y, z)
    return float(np.max(np.abs(joint - split)))


# -------------------------------------------------------------- random models


def random_latent_model(rng, n_observed, n_hidden=None, p_edge=0.4, card=2):
    """Random binary DAG with hidden common causes.

    Each hidden vertex is a root with two or three observed children, so the
    projection carries bidirected edges.  Returns the model; its observed
    margin is nested Markov with respect to ``model.admg()``.
    """
    obs = [f"V{i}" for i in range(n_observed)]
    if n_hidden is None:
        n_hidden = int(rng.integers(0, n_observed))
    hid = [f"H{i}" for i in range(n_hidden)]
    edges = [
        (obs[i], obs[j])
        for i in range(n_observed)
        for j in range(i + 1, n_observed)
        if rng.random() < p_edge
    ]
    for h in hid:
        size = min(n_observed, int(rng.integers(2, 4)))
        for v in rng.choice(obs, size=size, replace=False):
            edges.append((h, str(v)))
    dag = Admg(random=hid + obs, directed=edges)
    return random_model(rng, dag, hidden=hid, card=card)


def all_configs(cards):
    return product(*(range(k) for k in cards))


def canonical_dag(g: Admg):
    """DAG with one hidden root per bidirected edge; returns ``(dag, hidden)``."""
    hidden = [f"H_{a}_{b}" for a, b in sorted(g.bidirected)]
    edges = list(g.directed)
    for h, (a, b) in zip(hidden, sorted(g.bidirected)):
        edges += [(h, a), (h, b)]
    dag = Admg(random=hidden + list(g.random), directed=edges)
    return dag, frozenset(hidden)


def random_model_for(rng, g: Admg, card=2, low=0.05, high=0.95):
    """Random discrete model whose observed margin is Markov to ``g``."""
    dag, hidden = canonical_dag(g)
    return random_model(rng, dag, hidden=hidden, card=card, low=low, high=high)


def sample_model(m: DiscreteDagModel, n, rng):
    """Draw ``n`` rows of the observed variables by ancestral sampling."""
    values = {}
    for v in m.dag.topological_order():
        cpt = m.cpts[v]
        idx = tuple(values[p] for p in m.parents[v])
        probs = cpt[idx] if idx else np.broadcast_to(cpt, (n, cpt.shape[-1]))
        u = rng.random(n)[:, None]
        values[v] = (u > np.cumsum(probs, axis=-1)).sum(axis=-1).clip(max=m.cards[v] - 1)
    return {v: values[v].astype(float) for v in m.observed}
