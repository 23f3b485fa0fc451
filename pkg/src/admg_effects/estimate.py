"""Sample-level estimators of the mean outcome under an intervention on one
binary treatment."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.hermite_e import hermegauss

from .errors import InputError, NotIdentifiableError, PreconditionError
from .fixing import is_childless, is_fixable, is_mb_shielded, is_p_fixable
from .graph import Admg, ordered, partition_clm
from .identify import find_front_set, nested_ipw_plan, restrict_to_ancestors
from .nuisance import (
    BINARY,
    EPS,
    GAUSSIAN,
    Dataset,
    ModelSpec,
    cond_density,
    fit,
    mean,
    regress_beta,
)

GH_NODES = 20
PROPENSITY = "propensity"
OUTCOME = "outcome"


@dataclass
class EstimateResult:
    psi_hat: float
    contributions: np.ndarray
    se: float
    estimator: str
    nuisances: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    def to_dict(self):
        return {
            "estimator": self.estimator,
            "psi_hat": self.psi_hat,
            "se": self.se,
            "n": int(len(self.contributions)),
            "warnings": list(self.warnings),
            "nuisances": self.nuisances,
        }


def _result(contrib, name, fitter):
    contrib = np.asarray(contrib, dtype=float)
    n = len(contrib)
    psi = float(np.mean(contrib))
    se = float(np.std(contrib, ddof=1) / math.sqrt(n)) if n > 1 else float("nan")
    return EstimateResult(psi, contrib, se, name, fitter.summaries(), fitter.warnings)


@dataclass
class NuisanceConfig:
    """How nuisance models are fit.

    ``misspecify`` maps a vertex name, or the roles "propensity" and
    "outcome" for the final treatment and outcome models, to conditioning
    variables that are deliberately dropped.
    """

    misspecify: dict = field(default_factory=dict)
    basis: int = 1
    beta_basis: int = 2
    eps: float = EPS


class _Fitter:
    def __init__(self, data: Dataset, cfg: NuisanceConfig, weights=None):
        self.data = data
        self.cfg = cfg
        self.weights = weights
        self.models = []
        self.warnings = []

    def _dropped(self, target, given, role):
        drop = set(self.cfg.misspecify.get(target, ()))
        if role:
            drop |= set(self.cfg.misspecify.get(role, ()))
        return frozenset(drop & set(given))

    def model(self, target, given, role=None):
        given = tuple(given)
        for v in (target,) + given:
            if v not in self.data:
                raise InputError(f"dataset has no column for vertex {v!r}")
        family = BINARY if self.data.is_binary(target) else GAUSSIAN
        spec = ModelSpec(target, given, family, self._dropped(target, given, role), self.cfg.basis)
        f = fit(self.data, spec, weights=self.weights, eps=self.cfg.eps)
        if not f.converged:
            self.warnings.append(f"IRLS for {target} did not converge in {f.iterations} iterations")
        if family == BINARY:
            raw = mean(f, self.data)
            frac = float(np.mean((raw < f.eps) | (raw > 1.0 - f.eps)))
            if frac > 0.10:
                self.warnings.append(f"{frac:.1%} of fitted probabilities for {target} were clipped")
        self.models.append(f)
        return f

    def summaries(self):
        return [m.summary() for m in self.models]


def _columns(data):
    return dict(data.columns)


def _with(row, **vals):
    out = dict(row)
    n = len(next(iter(row.values())))
    for k, v in vals.items():
        out[k] = np.broadcast_to(np.asarray(v, dtype=float), (n,))
    return out


def _require_binary_treatment(data, t):
    if t not in data:
        raise InputError(f"dataset has no column for treatment {t!r}")
    if not data.is_binary(t):
        raise InputError(f"treatment {t} must be binary")


def _prepare(data, g, t, y, restrict=True):
    _require_binary_treatment(data, t)
    h = restrict_to_ancestors(g, y) if restrict else g
    if t not in h.random:
        raise InputError(f"{y} is not a descendant of {t}")
    return h, h.topological_order(t, y)


def _ordered_pillow(g, tau, v):
    return tuple(ordered(g.markov_pillow(tau, v), tuple(tau) + tuple(g.context)))


# ----------------------------------------------------------------- gAIPW / IPW


def _gaipw_core(fitter, t, t_val, y, mp):
    data = fitter.data
    row = _columns(data)
    pi_model = fitter.model(t, mp, role=PROPENSITY)
    mu_model = fitter.model(y, (t,) + tuple(mp), role=OUTCOME)
    ind = (row[t] == t_val).astype(float)
    pi = cond_density(pi_model, row, value=np.full(data.n, float(t_val)))
    mu = mean(mu_model, _with(row, **{t: t_val}))
    return ind / pi * (row[y] - mu) + mu


def est_gaipw(data, g: Admg, t, t_val, y, cfg=None) -> EstimateResult:
    """Augmented IPW for an adjustment-fixable treatment."""
    cfg = cfg or NuisanceConfig()
    h, tau = _prepare(data, g, t, y)
    if not is_fixable(h, t):
        raise PreconditionError(f"{t} is not adjustment fixable", witness=h.district(t) & h.descendants({t}))
    fitter = _Fitter(data, cfg)
    a = _gaipw_core(fitter, t, t_val, y, _ordered_pillow(h, tau, t))
    return _result(a, "gaipw", fitter)


def _ipw_weight(ind, prop):
    return ind / prop


def est_ipw(data, g: Admg, t, t_val, y, cfg=None) -> EstimateResult:
    """Plain IPW with the treatment's pillow as adjustment set."""
    cfg = cfg or NuisanceConfig()
    h, tau = _prepare(data, g, t, y)
    if not is_fixable(h, t):
        raise PreconditionError(f"{t} is not adjustment fixable")
    fitter = _Fitter(data, cfg)
    row = _columns(data)
    pi = cond_density(fitter.model(t, _ordered_pillow(h, tau, t), role=PROPENSITY), row)
    ind = (row[t] == t_val).astype(float)
    return _result(_ipw_weight(ind, pi) * row[y], "ipw", fitter)


# ------------------------------------------------------------ primal and dual


def _check_p_fixable(h, t):
    if not is_p_fixable(h, t):
        raise PreconditionError(
            f"{t} is not primal fixable: children {ordered(h.children(t) & h.district(t))} share its district",
            witness=h.children(t) & h.district(t),
        )


def _primal_beta(fitter, h, tau, t, t_val, y, regression=True):
    data = fitter.data
    row = _columns(data)
    part = partition_clm(h, tau, t)
    ind = (row[t] == t_val).astype(float)
    use_reg = regression and y in part.l_set
    others = [v for v in tau if v in part.l_set and v not in (t, y)]
    prop = fitter.model(t, _ordered_pillow(h, tau, t), role=PROPENSITY)
    models = [fitter.model(v, _ordered_pillow(h, tau, v)) for v in others]
    if y in part.l_set and not use_reg:
        models.append(fitter.model(y, _ordered_pillow(h, tau, y)))
    mu = fitter.model(y, _ordered_pillow(h, tau, y), role=OUTCOME) if use_reg else None

    def prod_at(r):
        out = np.ones(data.n)
        for m in models:
            out = out * cond_density(m, r)
        return out

    den_rest = prod_at(row)
    if not models and not use_reg:
        # the treatment is alone in its post-treatment district: the
        # numerator sums its own conditional and is identically one
        return _ipw_weight(ind, cond_density(prop, row)) * row[y]
    num = np.zeros(data.n)
    for tv in (0.0, 1.0):
        r = _with(row, **{t: tv})
        term = cond_density(prop, r) * prod_at(r)
        num = num + (term * mean(mu, r) if use_reg else term)
    den = cond_density(prop, row) * den_rest
    return ind * num / den * (1.0 if use_reg else row[y])


def est_primal_ipw(data, g: Admg, t, t_val, y, cfg=None, regression=True) -> EstimateResult:
    """Primal IPW; with ``regression`` the outcome density is replaced by an
    outcome regression when the outcome shares the treatment's district."""
    cfg = cfg or NuisanceConfig()
    h, tau = _prepare(data, g, t, y)
    _check_p_fixable(h, t)
    fitter = _Fitter(data, cfg)
    return _result(_primal_beta(fitter, h, tau, t, t_val, y, regression), "primal", fitter)


def _dual_beta(fitter, h, tau, t, t_val, y, regression=True):
    row = _columns(fitter.data)
    inv = ordered(h.inverse_markov_pillow(tau, t), tau)
    use_reg = regression and y in inv
    ratio = np.ones(fitter.data.n)
    clamped = _with(row, **{t: t_val})
    for v in inv:
        if v == y and use_reg:
            continue
        m = fitter.model(v, _ordered_pillow(h, tau, v))
        ratio = ratio * cond_density(m, clamped, value=row[v]) / cond_density(m, row)
    if use_reg:
        mu = fitter.model(y, _ordered_pillow(h, tau, y), role=OUTCOME)
        return ratio * mean(mu, clamped)
    return ratio * row[y]


def est_dual_ipw(data, g: Admg, t, t_val, y, cfg=None, regression=True) -> EstimateResult:
    """Dual IPW; with ``regression`` the outcome's density ratio is replaced
    by an outcome regression at the intervened treatment value."""
    cfg = cfg or NuisanceConfig()
    h, tau = _prepare(data, g, t, y)
    _check_p_fixable(h, t)
    fitter = _Fitter(data, cfg)
    return _result(_dual_beta(fitter, h, tau, t, t_val, y, regression), "dual", fitter)


# ---------------------------------------------------------------------- APIPW


def _apipw_integral(fitter, h, tau, t, t_val, y):
    """Augmented primal IPW influence function with every post-treatment sum
    or integral evaluated under the fitted models.

    Discrete vertices are enumerated; continuous ones are integrated with
    Gauss-Hermite quadrature.  The outcome enters through its regression.
    """
    tau = tuple(tau)
    if tau[-1] != y:
        raise InputError("the outcome must be last in the topological order")
    part = partition_clm(h, tau, t)
    data = fitter.data
    row = _columns(data)
    k = tau.index(t)
    models = {t: fitter.model(t, _ordered_pillow(h, tau, t), role=PROPENSITY)}
    for v in tau[k + 1 : -1]:
        models[v] = fitter.model(v, _ordered_pillow(h, tau, v))
    mu_y = fitter.model(y, _ordered_pillow(h, tau, y), role=OUTCOME)
    nodes, wts = hermegauss(GH_NODES)
    wts = wts / wts.sum()

    def inputs(v, r):
        return _with(r, **{t: t_val}) if v in part.m_set else r

    def factor(v, r):
        return cond_density(models[v], inputs(v, r), value=r[v])

    def tail(j, r):
        if j == len(tau):
            return r[y]
        v = tau[j]
        if v == y:
            return mean(mu_y, inputs(y, r))
        m = models[v]
        out = np.zeros(data.n)
        if data.is_binary(v):
            for val in (0.0, 1.0):
                r2 = _with(r, **{v: val})
                out = out + cond_density(m, inputs(v, r2), value=r2[v]) * tail(j + 1, r2)
        else:
            mu = mean(m, inputs(v, r))
            sd = math.sqrt(m.residual_variance)
            for x, w in zip(nodes, wts):
                out = out + w * tail(j + 1, _with(r, **{v: mu + sd * x}))
        return out

    def l_prod(j, r):
        out = np.ones(data.n)
        for v in tau[k:j]:
            if v in part.l_set:
                out = out * factor(v, r)
        return out

    ind = (row[t] == t_val).astype(float)
    total = tail(k + 1, row)
    m_ratio = np.ones(data.n)
    for j in range(k + 1, len(tau)):
        v = tau[j]
        if v in part.m_set:
            a = np.zeros(data.n)
            b = np.zeros(data.n)
            for tv in (0.0, 1.0):
                r = _with(row, **{t: tv})
                lp = l_prod(j, r)
                a = a + lp * tail(j + 1, r)
                b = b + lp * tail(j, r)
            total = total + ind / l_prod(j, row) * (a - b)
            if v != y:
                m_ratio = m_ratio * factor(v, row) / cond_density(models[v], row, value=row[v])
        else:
            total = total + m_ratio * (tail(j + 1, row) - tail(j, row))
    return total


def ladder_terms(g: Admg, tau, t, baseline="dual"):
    """Conditional-expectation terms of the regression form of the APIPW
    influence function as ``(sign, beta, conditioning)`` triples."""
    tau = tuple(tau)
    part = partition_clm(g, tau, t)
    out = [(+1, baseline, tuple(v for v in tau if v in part.c_set))]
    for j, v in enumerate(tau):
        if v in part.c_set:
            continue
        beta = "primal" if v in part.m_set else "dual"
        out.append((+1, beta, tau[: j + 1]))
        out.append((-1, beta, tau[:j]))
    return out


def _apipw_ladder(fitter, h, tau, t, t_val, y, baseline="dual"):
    data = fitter.data
    betas = {
        "primal": _primal_beta(fitter, h, tau, t, t_val, y, regression=False),
        "dual": _dual_beta(fitter, h, tau, t, t_val, y, regression=False),
    }
    total = np.zeros(data.n)
    for sign, beta, given in ladder_terms(h, tau, t, baseline):
        f = regress_beta(data, betas[beta], given, basis=fitter.cfg.beta_basis, weights=fitter.weights)
        total = total + sign * mean(f, data)
    return total


def _final_if(fitter, g, t, t_val, y):
    # gAIPW form when the treatment is adjustment fixable, else the
    # augmented primal form
    tau = g.topological_order(t, y)
    if is_fixable(g, t):
        return _gaipw_core(fitter, t, t_val, y, _ordered_pillow(g, tau, t))
    return _apipw_integral(fitter, g, tau, t, t_val, y)


def est_apipw(data, g: Admg, t, t_val, y, cfg=None, form="integral") -> EstimateResult:
    """Augmented primal IPW.

    ``form="integral"`` (default) evaluates the influence function with
    model-based sums; ``form="ladder"`` uses successive regressions of the
    primal and dual weighted outcomes.
    """
    cfg = cfg or NuisanceConfig()
    h, tau = _prepare(data, g, t, y)
    _check_p_fixable(h, t)
    fitter = _Fitter(data, cfg)
    if form == "ladder":
        return _result(_apipw_ladder(fitter, h, tau, t, t_val, y), "apipw-ladder", fitter)
    if form != "integral":
        raise InputError(f"unknown APIPW form {form!r}")
    return _result(_final_if(fitter, h, t, t_val, y), "apipw", fitter)


# ------------------------------------------------------------ efficient IFs


@dataclass(frozen=True)
class ProjectionSets:
    z_set: frozenset
    d_set: frozenset


def projection_sets(g: Admg, t, y, tau=None) -> ProjectionSets:
    """Conditional instruments ``Z`` and irrelevant vertices ``D`` that drop
    out of the efficient influence function."""
    tau = tuple(tau) if tau is not None else g.topological_order(t, y)
    mp = {v: g.markov_pillow(tau, v) for v in g.random}
    no_t = g.without({t})
    z_set = set()
    for v in g.random:
        if v in (t, y):
            continue
        cond = mp[v] - {t, y}
        if no_t.m_separated({v}, {y}, cond) and not g.m_separated({v}, {t}, mp[v] - {t}):
            z_set.add(v)
    target = {t, y} | mp[t]
    d_set = set()
    for v in g.random:
        if v in target:
            continue
        b = target - mp[v]
        if b and g.m_separated({v}, b, mp[v]):
            d_set.add(v)
    return ProjectionSets(frozenset(z_set), frozenset(d_set))


def _projection_sum(fitter, g, tau, vertices, beta_for):
    data = fitter.data
    total = np.zeros(data.n)
    for v in vertices:
        beta = beta_for(v)
        given = _ordered_pillow(g, tau, v)
        full = regress_beta(data, beta, (v,) + given, basis=fitter.cfg.beta_basis)
        part = regress_beta(data, beta, given, basis=fitter.cfg.beta_basis)
        total = total + mean(full, data) - mean(part, data)
    return total


def est_eff_gaipw(data, g: Admg, t, t_val, y, cfg=None) -> EstimateResult:
    """Efficient augmented IPW for adjustment-fixable treatments in
    mb-shielded graphs."""
    cfg = cfg or NuisanceConfig()
    _require_binary_treatment(data, t)
    if not is_fixable(g, t):
        raise PreconditionError(f"{t} is not adjustment fixable")
    if not is_mb_shielded(g):
        raise PreconditionError("graph is not mb-shielded; the efficient form does not apply")
    tau = g.topological_order(t, y)
    sets = projection_sets(g, t, y, tau)
    fitter = _Fitter(data, cfg)
    row = _columns(data)
    pi = cond_density(fitter.model(t, _ordered_pillow(g, tau, t), role=PROPENSITY), row)
    beta = _ipw_weight((row[t] == t_val).astype(float), pi) * row[y]
    keep = [v for v in tau if v != t and v not in sets.z_set | sets.d_set]
    total = _projection_sum(fitter, g, tau, keep, lambda v: beta) + np.mean(beta)
    res = _result(total, "eff-gaipw", fitter)
    return res


def est_eff_apipw(data, g: Admg, t, t_val, y, cfg=None, baseline="dual") -> EstimateResult:
    """Efficient augmented primal IPW for primal-fixable treatments in
    mb-shielded graphs."""
    cfg = cfg or NuisanceConfig()
    _require_binary_treatment(data, t)
    if not is_p_fixable(g, t):
        raise PreconditionError(f"{t} is not primal fixable")
    if not is_mb_shielded(g):
        raise PreconditionError("graph is not mb-shielded; the efficient form does not apply")
    tau = g.topological_order(t, y)
    part = partition_clm(g, tau, t)
    fitter = _Fitter(data, cfg)
    betas = {
        "primal": _primal_beta(fitter, g, tau, t, t_val, y, regression=False),
        "dual": _dual_beta(fitter, g, tau, t, t_val, y, regression=False),
    }

    def beta_for(v):
        if v in part.m_set:
            return betas["primal"]
        if v in part.l_set:
            return betas["dual"]
        return betas[baseline]

    total = _projection_sum(fitter, g, tau, tau, beta_for) + np.mean(betas[baseline])
    return _result(total, "eff-apipw", fitter)


# ------------------------------------------------------------- reweighting


def _validate_front(h, t, y, z):
    if z is None:
        front = find_front_set(h, t, y)
        return front.vertices if front is not None else ()
    z = tuple(getattr(z, "vertices", z))
    g = h
    for v in z:
        if v not in g.random:
            raise PreconditionError(f"{v} is not a random vertex of the current graph", witness=v)
        if v == t:
            raise PreconditionError("the treatment cannot be in the front set", witness=v)
        if not is_p_fixable(g, v):
            raise PreconditionError(f"{v} is not primal fixable at its step", witness=v)
        g = g.with_fixed(v)
    if not is_p_fixable(g, t):
        raise PreconditionError(f"{t} is not primal fixable after fixing {list(z)}", witness=tuple(z))
    return z


def _marginal_density(data, v, weights=None):
    family = BINARY if data.is_binary(v) else GAUSSIAN
    f = fit(data, ModelSpec(v, (), family), weights=weights)
    return cond_density(f, data), f


def est_reweighted(data, g: Admg, t, t_val, y, z=None, cfg=None) -> EstimateResult:
    """Sequentially reweighted estimating equation.

    ``z`` is a primal fixing sequence after which the treatment is primal
    fixable (found automatically when omitted).  Each step multiplies the
    weights by a stabilized inverse nested propensity; vertices that are
    childless at their step are marginalized and cost nothing.
    """
    cfg = cfg or NuisanceConfig()
    h, _ = _prepare(data, g, t, y)
    z = _validate_front(h, t, y, z)
    w = np.ones(data.n)
    cur = h
    fitter = _Fitter(data, cfg)
    for v in z:
        if is_childless(cur, v):
            cur = cur.with_fixed(v)
            continue
        if not data.is_binary(v):
            raise InputError(f"primal fixing weights need a binary {v}")
        tau = cur.topological_order()
        pos = tau.index(v)
        members = [u for u in cur.district(v) if tau.index(u) >= pos]
        step = _Fitter(data, cfg, weights=w)
        models = [step.model(u, _ordered_pillow(cur, tau, u)) for u in members]
        row = _columns(data)

        def prod(r):
            out = np.ones(data.n)
            for m in models:
                out = out * cond_density(m, r)
            return out

        total = prod(_with(row, **{v: 0.0})) + prod(_with(row, **{v: 1.0}))
        pi = prod(row) / total
        p_star, fz = _marginal_density(data, v)
        fitter.models.extend(step.models + [fz])
        fitter.warnings.extend(step.warnings)
        w = w * p_star / pi
        cur = cur.with_fixed(v)
    w = w / np.mean(w)
    final = _Fitter(data, cfg, weights=w)
    a = _final_if(final, cur, t, t_val, y)
    fitter.models.extend(final.models)
    fitter.warnings.extend(final.warnings)
    return _result(w * a, "reweighted", fitter)


def nested_weights(data, plan, cfg=None):
    """Product of estimated rebalancing weights for a nested IPW plan."""
    cfg = cfg or NuisanceConfig()
    g = plan.graph
    row = _columns(data)
    rho = np.ones(data.n)
    fitters = []
    for spec in plan.rho_specs:
        w = np.ones(data.n)
        cur = g
        for step in spec.sequence:
            v = step.vertex
            if step.kind != "marginalize":
                f = _Fitter(data, cfg, weights=w)
                q = f.model(v, tuple(ordered(cur.markov_blanket(v), plan.tau + g.context)))
                p_star, fz = _marginal_density(data, v)
                f.models.append(fz)
                fitters.append(f)
                w = w * p_star / cond_density(q, row)
            cur = cur.with_fixed(v)
        tau_d = tuple(u for u in plan.tau if u in cur.random)
        f = _Fitter(data, cfg, weights=w)
        num = np.ones(data.n)
        for u in spec.district:
            num = num * cond_density(f.model(u, _ordered_pillow(cur, tau_d, u)), row)
        f_den = _Fitter(data, cfg)
        den = np.ones(data.n)
        for u, given in spec.denominators:
            den = den * cond_density(f_den.model(u, given), row)
        fitters += [f, f_den]
        rho = rho * num / den
    return rho, fitters


def est_anipw(data, g: Admg, t, t_val, y, cfg=None) -> EstimateResult:
    """Augmented nested IPW: gAIPW under the rebalanced law."""
    cfg = cfg or NuisanceConfig()
    _require_binary_treatment(data, t)
    plan = nested_ipw_plan(g, t, y)
    if not plan.ok:
        raise NotIdentifiableError(
            f"district {{{', '.join(plan.failed)}}} is not intrinsic", witness=plan.failed
        )
    rho, fitters = nested_weights(data, plan, cfg)
    final = _Fitter(data, cfg, weights=rho)
    mp = _ordered_pillow(plan.graph, plan.tau, t)
    a = _gaipw_core(final, t, t_val, y, mp)
    out = _Fitter(data, cfg)
    for f in fitters + [final]:
        out.models.extend(f.models)
        out.warnings.extend(f.warnings)
    return _result(rho * a / np.mean(rho), "anipw", out)


ESTIMATORS = {
    "gaipw": est_gaipw,
    "ipw": est_ipw,
    "primal": est_primal_ipw,
    "dual": est_dual_ipw,
    "apipw": est_apipw,
    "eff-gaipw": est_eff_gaipw,
    "eff-apipw": est_eff_apipw,
    "reweighted": est_reweighted,
    "anipw": est_anipw,
}
