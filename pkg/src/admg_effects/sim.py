"""Structural causal models built from ADMGs, sampling, Monte Carlo ground
truth and the four double-robustness / efficiency experiments."""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import InputError
from .estimate import ESTIMATORS, NuisanceConfig
from .graph import Admg
from .nuisance import Dataset

HIDDEN_P = 0.5
HIDDEN_LOW, HIDDEN_HIGH = 0.0, 1.0
COEF_LOW, COEF_HIGH = 0.5, 1.5
WORKERS_ENV = "ADMG_EFFECTS_WORKERS"

# binary vertices of the bundled example graphs; everything else is Gaussian
DEFAULT_BINARY = {
    "instruments": ("Z1", "T", "D2"),
    "shielded": ("Z1", "C1", "T", "M", "L"),
    "sequential": ("Z2", "T"),
    "nested": ("R1", "R2", "T"),
}


@dataclass(frozen=True)
class Hidden:
    name: str
    kind: str  # "bernoulli" or "uniform"
    params: tuple


@dataclass
class ScmSpec:
    """Linear-Gaussian / logistic structural equations over an ADMG with two
    hidden common causes per bidirected edge."""

    admg: Admg
    binary: frozenset
    hidden: tuple
    hidden_parents: dict
    intercepts: dict
    coefficients: dict  # vertex -> {parent or hidden: coefficient}
    seed: int

    def metadata(self):
        return {
            "seed": self.seed,
            "binary": sorted(self.binary),
            "hidden": [asdict(h) for h in self.hidden],
            "intercepts": self.intercepts,
            "coefficients": self.coefficients,
        }


def build_scm(g: Admg, seed, binary=None) -> ScmSpec:
    """Draw an SCM whose latent projection is ``g``.

    Coefficients have magnitude Uniform(0.5, 1.5) and a random sign.
    """
    if g.context:
        raise InputError("structural models are built for graphs without context vertices")
    binary = frozenset(binary or ())
    unknown = binary - set(g.random)
    if unknown:
        raise InputError(f"binary designation names unknown vertices {sorted(unknown)}")
    rng = np.random.default_rng(seed)
    hidden, hidden_parents = [], {v: [] for v in g.random}
    for i, (a, b) in enumerate(sorted(g.bidirected)):
        hb = Hidden(f"H{2 * i + 1}", "bernoulli", (HIDDEN_P,))
        hu = Hidden(f"H{2 * i + 2}", "uniform", (HIDDEN_LOW, HIDDEN_HIGH))
        hidden += [hb, hu]
        for v in (a, b):
            hidden_parents[v] += [hb.name, hu.name]
    order = g.topological_order()
    intercepts, coefficients = {}, {}
    for v in order:
        intercepts[v] = float(_draw(rng))
        sources = sorted(g.parents(v)) + hidden_parents[v]
        coefficients[v] = {s: float(_draw(rng)) for s in sources}
    return ScmSpec(g, binary, tuple(hidden), hidden_parents, intercepts, coefficients, int(seed))


def _draw(rng):
    return rng.choice((-1.0, 1.0)) * rng.uniform(COEF_LOW, COEF_HIGH)


def _noise(s: ScmSpec, n, rng):
    # all randomness is drawn up front so interventions reuse it
    noise = {}
    for h in s.hidden:
        if h.kind == "bernoulli":
            noise[h.name] = (rng.random(n) < h.params[0]).astype(float)
        else:
            noise[h.name] = rng.uniform(h.params[0], h.params[1], n)
    for v in s.admg.topological_order():
        noise[v] = rng.random(n) if v in s.binary else rng.standard_normal(n)
    return noise


def _evaluate(s: ScmSpec, noise, do=None):
    do = do or {}
    n = len(next(iter(noise.values())))
    vals = {h.name: noise[h.name] for h in s.hidden}
    for v in s.admg.topological_order():
        if v in do:
            vals[v] = np.full(n, float(do[v]))
            continue
        eta = np.full(n, s.intercepts[v])
        for src, c in s.coefficients[v].items():
            eta = eta + c * vals[src]
        if v in s.binary:
            vals[v] = (noise[v] < 1.0 / (1.0 + np.exp(-eta))).astype(float)
        else:
            vals[v] = eta + noise[v]
    return {v: vals[v] for v in s.admg.random}


def treatment_overlap(s: ScmSpec, t, n=20_000, seed=7, bound=0.05):
    """Fraction of units whose structural treatment probability (given all
    observed and hidden parents) falls outside ``[bound, 1 - bound]``."""
    if t not in s.binary:
        raise InputError(f"treatment {t} must be binary")
    noise = _noise(s, n, np.random.default_rng(seed))
    vals = _evaluate(s, noise)
    vals.update({h.name: noise[h.name] for h in s.hidden})
    eta = np.full(n, s.intercepts[t])
    for src, c in s.coefficients[t].items():
        eta = eta + c * vals[src]
    p = 1.0 / (1.0 + np.exp(-eta))
    return float(np.mean((p < bound) | (p > 1.0 - bound)))


def select_scm_seed(g: Admg, t, binary, max_fraction=0.05, start=1, limit=1000):
    """First seed from ``start`` whose SCM keeps all but ``max_fraction`` of
    treatment probabilities inside [0.05, 0.95]."""
    for seed in range(start, start + limit):
        if treatment_overlap(build_scm(g, seed, binary), t) <= max_fraction:
            return seed
    raise InputError(f"no seed in [{start}, {start + limit}) gives adequate treatment overlap")


def sample(s: ScmSpec, n, seed) -> Dataset:
    if n <= 0:
        raise InputError("sample size must be positive")
    rng = np.random.default_rng(seed)
    return Dataset(_evaluate(s, _noise(s, n, rng)), binary=s.binary)


def true_ace(s: ScmSpec, t, y, n=10**6, seed=0, chunk=200_000):
    """Monte Carlo ``E[Y(1) - Y(0)]`` with common random numbers; returns
    ``(ace, mc_se)``."""
    if n <= 0:
        raise InputError("number of draws must be positive")
    rng = np.random.default_rng(seed)
    total = total_sq = 0.0
    done = 0
    while done < n:
        m = min(chunk, n - done)
        noise = _noise(s, m, rng)
        diff = _evaluate(s, noise, {t: 1})[y] - _evaluate(s, noise, {t: 0})[y]
        total += float(diff.sum())
        total_sq += float((diff**2).sum())
        done += m
    ace = total / n
    var = max(total_sq / n - ace**2, 0.0)
    return ace, math.sqrt(var / n)


# ----------------------------------------------------------------- experiments


@dataclass(frozen=True)
class Scenario:
    label: str
    misspecify: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Experiment:
    graph: str
    estimator: str
    scenarios: tuple
    efficiency: tuple = ()  # (nonparametric estimator, efficient estimator)
    t: str = "T"
    y: str = "Y"
    options: dict = field(default_factory=dict)


_CONF = frozenset({"C1", "C2"})

EXPERIMENTS = {
    "sim1": Experiment(
        "instruments",
        "gaipw",
        (
            Scenario("both_correct"),
            Scenario("propensity_wrong", {"propensity": _CONF}),
            Scenario("outcome_wrong", {"outcome": _CONF}),
            Scenario("both_wrong", {"propensity": _CONF, "outcome": _CONF}),
        ),
        efficiency=("gaipw", "eff-gaipw"),
    ),
    "sim2": Experiment(
        "shielded",
        "apipw",
        (
            Scenario("both_correct"),
            Scenario("m_set_wrong", {"M": {"C2"}, "Y": {"C2"}}),
            Scenario("l_set_wrong", {"T": _CONF, "L": _CONF}),
            Scenario("both_wrong", {"M": {"C2"}, "Y": {"C2"}, "T": _CONF, "L": _CONF}),
        ),
        efficiency=("apipw", "eff-apipw"),
    ),
    "sim3": Experiment(
        "sequential",
        "reweighted",
        (
            Scenario("both_correct"),
            Scenario("propensity_wrong", {"propensity": {"C"}}),
            Scenario("outcome_wrong", {"outcome": {"C"}}),
            Scenario("both_wrong", {"propensity": {"C"}, "outcome": {"C"}}),
        ),
        options={"z": ("Z2", "Z1")},
    ),
    "sim4": Experiment(
        "nested",
        "anipw",
        (
            Scenario("both_correct"),
            Scenario("propensity_wrong", {"propensity": {"C"}}),
            Scenario("outcome_wrong", {"outcome": {"C"}}),
            Scenario("both_wrong", {"propensity": {"C"}, "outcome": {"C"}}),
        ),
    ),
}


@dataclass
class SimConfig:
    simulation: str = "sim1"
    n: int = 1000
    trials: int = 100
    master_seed: int = 0
    scm_seed: int | None = None  # None: first seed with adequate overlap
    n_grid: tuple = ()
    output_dir: str | None = None
    basis: int = 2
    beta_basis: int = 2
    truth_draws: int = 10**6
    workers: int | None = None
    custom: dict | None = None  # {"graph": path, "estimator": ..., "binary": [...], "scenarios": {...}}

    @classmethod
    def from_json(cls, data):
        if isinstance(data, str):
            data = json.loads(data)
        known = set(cls.__dataclass_fields__)
        extra = set(data) - known
        if extra:
            raise InputError(f"unknown simulation config keys {sorted(extra)}")
        data = dict(data)
        if "n_grid" in data:
            data["n_grid"] = tuple(data["n_grid"])
        return cls(**data)


@dataclass
class SimReport:
    estimator: str
    scenario: str
    n: int
    trials: list
    true_ace: float
    truth_se: float

    @property
    def n_trials(self):
        return len(self.trials)

    @property
    def bias(self):
        return float(np.mean(self.trials) - self.true_ace)

    @property
    def variance(self):
        return float(np.var(self.trials, ddof=1))

    @property
    def mc_se(self):
        return float(math.sqrt(self.variance / self.n_trials + self.truth_se**2))

    def row(self):
        return {
            "estimator": self.estimator,
            "scenario": self.scenario,
            "n": self.n,
            "n_trials": self.n_trials,
            "true_ace": self.true_ace,
            "bias": self.bias,
            "variance": self.variance,
            "mc_se": self.mc_se,
        }


def _resolve(cfg: SimConfig):
    from . import fixture
    from .graph import load_graph

    if cfg.custom is not None:
        c = cfg.custom
        g = load_graph(c["graph"])
        scen = tuple(
            Scenario(label, {k: frozenset(v) for k, v in spec.items()})
            for label, spec in c.get("scenarios", {"default": {}}).items()
        )
        exp = Experiment(
            c["graph"], c["estimator"], scen, tuple(c.get("efficiency", ())),
            c.get("treatment", "T"), c.get("outcome", "Y"),
        )
        return exp, g, frozenset(c.get("binary", ()))
    if cfg.simulation not in EXPERIMENTS:
        raise InputError(f"unknown simulation {cfg.simulation!r}; expected one of {sorted(EXPERIMENTS)}")
    exp = EXPERIMENTS[cfg.simulation]
    return exp, fixture(exp.graph), frozenset(DEFAULT_BINARY.get(exp.graph, ()))


def trial_seed(master, *counter):
    """Independent seed for one trial derived from the master seed."""
    return int(np.random.SeedSequence([master, *counter]).generate_state(1)[0])


def ace_estimate(estimator, data, g, t, y, cfg: NuisanceConfig, **options):
    """ACE estimate and its per-row contributions (t=1 minus t=0)."""
    fn = ESTIMATORS[estimator]
    r1 = fn(data, g, t, 1, y, cfg=cfg, **options)
    r0 = fn(data, g, t, 0, y, cfg=cfg, **options)
    return r1.psi_hat - r0.psi_hat, r1.contributions - r0.contributions


def _run_trial(args):
    scm, n, seed, estimator, g, t, y, ncfg, options = args
    data = sample(scm, n, seed)
    ace, contrib = ace_estimate(estimator, data, g, t, y, ncfg, **options)
    return ace, float(np.var(contrib, ddof=1))


def _workers(cfg):
    if cfg.workers is not None:
        return max(1, int(cfg.workers))
    return max(1, int(os.environ.get(WORKERS_ENV, "1")))


def _map(fn, jobs, workers):
    if workers == 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs, chunksize=max(1, len(jobs) // (4 * workers))))


def run_simulation(cfg: SimConfig):
    """Run every scenario (and the efficiency grid, when defined).

    Returns ``(reports, efficiency_rows)`` and writes CSVs when
    ``cfg.output_dir`` is set.
    """
    exp, g, binary = _resolve(cfg)
    scm_seed = cfg.scm_seed if cfg.scm_seed is not None else select_scm_seed(g, exp.t, binary)
    scm = build_scm(g, scm_seed, binary)
    truth, truth_se = true_ace(scm, exp.t, exp.y, n=cfg.truth_draws, seed=trial_seed(scm_seed, 999))
    workers = _workers(cfg)
    reports = []
    for si, sc in enumerate(exp.scenarios):
        ncfg = NuisanceConfig(dict(sc.misspecify), basis=cfg.basis, beta_basis=cfg.beta_basis)
        jobs = [
            (scm, cfg.n, trial_seed(cfg.master_seed, si, k), exp.estimator, g, exp.t, exp.y, ncfg, exp.options)
            for k in range(cfg.trials)
        ]
        out = _map(_run_trial, jobs, workers)
        reports.append(SimReport(exp.estimator, sc.label, cfg.n, [a for a, _ in out], truth, truth_se))
    eff_rows = []
    if exp.efficiency and cfg.n_grid:
        eff_rows = efficiency_grid(scm, g, exp, cfg, truth, truth_se, workers)
    if cfg.output_dir:
        write_outputs(cfg, scm, reports, eff_rows)
    return reports, eff_rows


def efficiency_grid(scm, g, exp, cfg, truth, truth_se, workers):
    """Compare a nonparametric and an efficient estimator on shared data."""
    rows = []
    ncfg = NuisanceConfig(basis=cfg.basis, beta_basis=cfg.beta_basis)
    for n in cfg.n_grid:
        seeds = [trial_seed(cfg.master_seed, 10_000, n, k) for k in range(cfg.trials)]
        per = {}
        for est in exp.efficiency:
            jobs = [(scm, n, s, est, g, exp.t, exp.y, ncfg, exp.options) for s in seeds]
            per[est] = _map(_run_trial, jobs, workers)
        base, eff = exp.efficiency
        wins = sum(e[1] < b[1] for b, e in zip(per[base], per[eff]))
        for est in exp.efficiency:
            rep = SimReport(est, "efficiency", n, [a for a, _ in per[est]], truth, truth_se)
            rows.append(
                {
                    **rep.row(),
                    "mean_if_variance": float(np.mean([v for _, v in per[est]])),
                    "efficient_wins": wins if est == eff else "",
                }
            )
    return rows


def write_outputs(cfg, scm, reports, eff_rows):
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    for rep in reports:
        with open(out / f"boxplot_{rep.scenario}.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["trial", "estimator", "scenario", "n", "estimate", "true_ace"])
            for k, a in enumerate(rep.trials):
                w.writerow([k, rep.estimator, rep.scenario, rep.n, repr(a), repr(rep.true_ace)])
    with open(out / "summary.csv", "w", newline="", encoding="utf-8") as fh:
        rows = [r.row() for r in reports]
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    if eff_rows:
        with open(out / "efficiency_table.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=list(eff_rows[0]))
            w.writeheader()
            w.writerows(eff_rows)
    meta = {"config": {k: v for k, v in asdict(cfg).items() if k != "output_dir"}, "scm": scm.metadata()}
    meta["config"]["n_grid"] = list(cfg.n_grid)
    with open(out / "metadata.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
