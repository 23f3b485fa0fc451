"""Weighted GLM nuisance models: logistic for binary targets and
homoscedastic Gaussian-linear for continuous ones."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from itertools import combinations_with_replacement
from pathlib import Path

import numpy as np

from .errors import FitError, InputError

BINARY = "binary_logistic"
GAUSSIAN = "gaussian_linear"
EPS = 0.01
MAX_ITER = 100
TOL = 1e-8


# -------------------------------------------------------------------- dataset


@dataclass
class Dataset:
    """Columnar samples; ``binary`` names the {0,1}-valued columns."""

    columns: dict
    binary: frozenset = frozenset()
    weights: np.ndarray | None = None

    def __post_init__(self):
        self.columns = {k: np.asarray(v, dtype=float) for k, v in self.columns.items()}
        lengths = {len(v) for v in self.columns.values()}
        if len(lengths) > 1:
            raise InputError(f"columns have unequal lengths {sorted(lengths)}")
        self.binary = frozenset(self.binary)
        for b in self.binary:
            if b not in self.columns:
                raise InputError(f"binary column {b!r} is not in the dataset")
            if not np.isin(self.columns[b], (0.0, 1.0)).all():
                raise InputError(f"column {b!r} is declared binary but has values outside {{0,1}}")
        if self.weights is not None:
            self.weights = np.asarray(self.weights, dtype=float)
            if self.weights.shape != (self.n,) or np.any(self.weights <= 0):
                raise InputError("weights must be positive with one entry per row")

    @property
    def n(self):
        return len(next(iter(self.columns.values()))) if self.columns else 0

    def __getitem__(self, name):
        try:
            return self.columns[name]
        except KeyError:
            raise InputError(f"dataset has no column {name!r}") from None

    def __contains__(self, name):
        return name in self.columns

    def is_binary(self, name):
        return name in self.binary

    def with_columns(self, **updates):
        """Copy with some columns replaced (e.g. a treatment clamped to a value)."""
        cols = dict(self.columns)
        for k, v in updates.items():
            cols[k] = np.broadcast_to(np.asarray(v, dtype=float), (self.n,)).copy()
        return Dataset(cols, self.binary, self.weights)

    def to_csv(self, path, order=None):
        names = list(order or self.columns)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(names)
            for row in zip(*(self.columns[c] for c in names)):
                w.writerow([_fmt(c, x, self.binary) for c, x in zip(names, row)])


def _fmt(name, x, binary):
    return str(int(x)) if name in binary else repr(float(x))


def load_dataset(path, schema=None) -> Dataset:
    """Read a CSV with a header row.

    Columns whose values are all 0/1 are binary unless a schema (a dict or a
    JSON sidecar path with a ``"binary"`` and/or ``"continuous"`` list) says
    otherwise.  A ``<file>.schema.json`` next to the CSV is picked up
    automatically.
    """
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise InputError(f"{path}: empty file") from None
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise InputError(f"{path}: line {lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                rows.append([float(x) for x in row])
            except ValueError as exc:
                raise InputError(f"{path}: line {lineno}: {exc}") from None
    data = np.array(rows, dtype=float).reshape(-1, len(header))
    columns = {h: data[:, i] for i, h in enumerate(header)}
    if schema is None:
        sidecar = path.with_suffix(".schema.json")
        schema = sidecar if sidecar.exists() else {}
    if not isinstance(schema, dict):
        with open(schema, encoding="utf-8") as fh:
            schema = json.load(fh)
    binary = {h for h, v in columns.items() if np.isin(v, (0.0, 1.0)).all()}
    binary -= set(schema.get("continuous", []))
    binary |= set(schema.get("binary", []))
    return Dataset(columns, frozenset(binary))


# --------------------------------------------------------------------- models


@dataclass(frozen=True)
class ModelSpec:
    target: str
    conditioning: tuple
    family: str
    dropped: frozenset = frozenset()
    basis: int = 1

    def __post_init__(self):
        object.__setattr__(self, "conditioning", tuple(self.conditioning))
        object.__setattr__(self, "dropped", frozenset(self.dropped))
        if self.target in self.conditioning:
            raise InputError(f"{self.target} cannot condition on itself")
        if not self.dropped <= set(self.conditioning):
            extra = sorted(self.dropped - set(self.conditioning))
            raise InputError(f"dropped variables {extra} are not in the conditioning set of {self.target}")
        if self.family not in (BINARY, GAUSSIAN):
            raise InputError(f"unknown family {self.family!r}")
        if self.basis < 1:
            raise InputError("basis degree must be at least 1")

    @property
    def inputs(self):
        return tuple(c for c in self.conditioning if c not in self.dropped)


@dataclass
class FittedModel:
    spec: ModelSpec
    coefficients: np.ndarray
    terms: tuple
    binary_inputs: frozenset
    residual_variance: float | None = None
    converged: bool = True
    iterations: int = 0
    eps: float = EPS

    def summary(self):
        out = {
            "target": self.spec.target,
            "family": self.spec.family,
            "inputs": list(self.spec.inputs),
            "dropped": sorted(self.spec.dropped),
            "terms": ["1" if not t else "*".join(t) for t in self.terms],
            "coefficients": [float(c) for c in self.coefficients],
            "converged": self.converged,
            "iterations": self.iterations,
        }
        if self.residual_variance is not None:
            out["residual_variance"] = float(self.residual_variance)
        return out


def basis_terms(inputs, degree, binary=frozenset()):
    """Monomials of total degree <= ``degree``; powers of binary inputs are
    skipped since they repeat lower-order terms."""
    terms = [()]
    for d in range(1, degree + 1):
        for combo in combinations_with_replacement(inputs, d):
            if any(combo.count(b) > 1 for b in binary):
                continue
            terms.append(combo)
    return tuple(terms)


def _design(data, terms):
    cols = []
    n = None
    for term in terms:
        col = None
        for name in term:
            try:
                x = data[name]
            except KeyError:
                raise InputError(f"missing column {name!r}") from None
            x = np.asarray(x, dtype=float)
            col = x if col is None else col * x
            n = len(x)
        cols.append(col)
    if n is None:
        n = _nrows(data)
    return np.column_stack([np.ones(n) if c is None else c for c in cols])


def _nrows(data):
    if isinstance(data, Dataset):
        return data.n
    return len(next(iter(data.values())))


def _term_name(term):
    return "intercept" if not term else "*".join(term)


def _check_rank(x, terms, w):
    xw = x * np.sqrt(w)[:, None]
    if np.linalg.matrix_rank(xw) == x.shape[1]:
        return
    kept, bad = [], []
    for j in range(x.shape[1]):
        trial = kept + [j]
        if np.linalg.matrix_rank(xw[:, trial]) == len(trial):
            kept = trial
        else:
            bad.append(_term_name(terms[j]))
    raise FitError(f"singular design: columns {bad} are collinear with earlier columns")


def fit(data, spec: ModelSpec, response=None, weights=None, eps=EPS) -> FittedModel:
    """Fit ``spec`` by weighted least squares or IRLS.

    ``response`` overrides the target column (used for regressions of
    derived quantities); ``weights`` default to the dataset's weights.
    """
    y = np.asarray(data[spec.target] if response is None else response, dtype=float)
    n = len(y)
    if weights is None:
        weights = getattr(data, "weights", None)
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    binary_inputs = frozenset(
        c for c in spec.inputs if isinstance(data, Dataset) and data.is_binary(c)
    )
    terms = basis_terms(spec.inputs, spec.basis, binary_inputs)
    x = _design(data, terms)
    if n <= x.shape[1]:
        raise FitError(f"{n} rows cannot support {x.shape[1]} terms for {spec.target}")
    _check_rank(x, terms, w)
    if spec.family == GAUSSIAN:
        sw = np.sqrt(w)
        coef, *_ = np.linalg.lstsq(x * sw[:, None], y * sw, rcond=None)
        resid = y - x @ coef
        var = float((w * resid**2).sum() / w.sum() * n / (n - x.shape[1]))
        return FittedModel(spec, coef, terms, binary_inputs, residual_variance=max(var, 1e-300), eps=eps)
    if not (np.any(y == 1) and np.any(y == 0)):
        raise FitError(f"logistic model for {spec.target} needs both classes present")
    coef, converged, it = _irls(x, y, w)
    return FittedModel(spec, coef, terms, binary_inputs, converged=converged, iterations=it, eps=eps)


def _irls(x, y, w):
    coef = np.zeros(x.shape[1])
    for it in range(1, MAX_ITER + 1):
        eta = np.clip(x @ coef, -30.0, 30.0)
        mu = 1.0 / (1.0 + np.exp(-eta))
        var = np.maximum(mu * (1.0 - mu), 1e-12)
        z = eta + (y - mu) / var
        sw = np.sqrt(w * var)
        new, *_ = np.linalg.lstsq(x * sw[:, None], z * sw, rcond=None)
        step = np.max(np.abs(new - coef))
        coef = new
        if step < TOL:
            return coef, True, it
    return coef, False, MAX_ITER


def _linear(f: FittedModel, data):
    return _design(data, f.terms) @ f.coefficients


def mean(f: FittedModel, data):
    """Fitted conditional mean for every row of ``data``."""
    eta = _linear(f, data)
    if f.spec.family == GAUSSIAN:
        return eta
    return 1.0 / (1.0 + np.exp(-np.clip(eta, -30.0, 30.0)))


def probability(f: FittedModel, data, clip=True):
    """``P(target = 1 | inputs)`` for a logistic model, clipped by default."""
    if f.spec.family != BINARY:
        raise InputError(f"{f.spec.target} is not modelled as binary")
    p = mean(f, data)
    return np.clip(p, f.eps, 1.0 - f.eps) if clip else p


def cond_density(f: FittedModel, data, value=None, clip=True):
    """Density (or probability) of ``value`` (default: the observed target)."""
    v = np.asarray(data[f.spec.target] if value is None else value, dtype=float)
    if f.spec.family == BINARY:
        p = probability(f, data, clip=clip)
        return np.where(v == 1.0, p, 1.0 - p)
    mu = mean(f, data)
    s2 = f.residual_variance
    return np.exp(-0.5 * (v - mu) ** 2 / s2) / math.sqrt(2.0 * math.pi * s2)


def density_ratio(f: FittedModel, data, clamp: dict):
    """Density with ``clamp`` substituted into the inputs over the density at
    the observed inputs."""
    for var in clamp:
        if var not in f.spec.conditioning:
            raise InputError(f"{var} is not an input of the model for {f.spec.target}")
    clamped = _substitute(data, clamp)
    return cond_density(f, clamped, value=data[f.spec.target]) / cond_density(f, data)


def _substitute(data, values: dict):
    if isinstance(data, Dataset):
        return data.with_columns(**values)
    out = dict(data)
    n = _nrows(data)
    for k, v in values.items():
        out[k] = np.broadcast_to(np.asarray(v, dtype=float), (n,))
    return out


def regress_beta(data, beta_hat, conditioning, basis=1, weights=None) -> FittedModel:
    """Gaussian-linear regression of ``beta_hat`` on a basis over ``conditioning``."""
    beta_hat = np.asarray(beta_hat, dtype=float)
    if len(beta_hat) != _nrows(data):
        raise InputError("beta_hat needs one value per row")
    spec = ModelSpec("__beta__", tuple(conditioning), GAUSSIAN, basis=basis)
    return fit(data, spec, response=beta_hat, weights=weights)


def parse_misspecification(text):
    """Parse ``"T=C1,C2;Y=C1"`` into ``{"T": {"C1","C2"}, "Y": {"C1"}}``."""
    out = {}
    if not text:
        return out
    for part in text.split(";"):
        part = part.strip()
        if not part:
            continue
        if "=" not in part:
            raise InputError(f"misspecification entry {part!r} must look like target=var1,var2")
        target, vars_ = part.split("=", 1)
        out.setdefault(target.strip(), set()).update(v.strip() for v in vars_.split(",") if v.strip())
    return {k: frozenset(v) for k, v in out.items()}
