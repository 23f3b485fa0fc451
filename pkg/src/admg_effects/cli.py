"""Command-line interface: graph checks, identification, estimation,
simulation and exact oracle evaluation."""

from __future__ import annotations

import json
import sys

import click
import numpy as np

from . import __version__
from .errors import (
    AdmgError,
    FitError,
    InputError,
    NotIdentifiableError,
    PositivityError,
    PreconditionError,
)
from .fixing import check_nps, is_fixable, is_mb_shielded, is_p_fixable
from .graph import load_graph
from .identify import NOT_IDENTIFIABLE, SEQUENTIAL_PFIX, identify

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_NOT_IDENTIFIABLE = 2
EXIT_PRECONDITION = 3

CRITERIA = ("a-fix", "p-fix", "nps", "mb-shielded")


def _emit(obj, fmt, text):
    if fmt == "json":
        click.echo(json.dumps(obj, indent=2, sort_keys=True))
    else:
        click.echo(text)


def _fail(exc, fmt):
    if isinstance(exc, NotIdentifiableError):
        code, kind = EXIT_NOT_IDENTIFIABLE, "not_identifiable"
    elif isinstance(exc, PreconditionError):
        code, kind = EXIT_PRECONDITION, "precondition"
    elif isinstance(exc, (FitError, PositivityError)):
        code, kind = EXIT_PRECONDITION, "numerical"
    else:
        code, kind = EXIT_INPUT, "input"
    witness = getattr(exc, "witness", None)
    if fmt == "json":
        err = {"error": {"kind": kind, "message": str(exc)}}
        if witness is not None:
            err["error"]["witness"] = _plain(witness)
        click.echo(json.dumps(err, indent=2, sort_keys=True))
    click.echo(f"error: {exc}", err=True)
    sys.exit(code)


def _plain(x):
    if isinstance(x, (set, frozenset)):
        return sorted(x)
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    return x


def _graph(path):
    try:
        return load_graph(path)
    except OSError as exc:
        raise InputError(f"cannot read graph {path!r}: {exc.strerror}") from exc


def _csv(text):
    return tuple(v.strip() for v in text.split(",") if v.strip()) if text else ()


format_option = click.option(
    "--format", "fmt", type=click.Choice(["text", "json"]), default="text", show_default=True
)


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.version_option(__version__, prog_name="admg-effects")
def main():
    """Identify and estimate treatment effects in acyclic directed mixed graphs."""


# ------------------------------------------------------------------- check


@main.command()
@click.option("--graph", "graph_path", required=True, type=click.Path(dir_okay=False))
@click.option("--criterion", type=click.Choice(CRITERIA), required=True)
@click.option("--vertex", "--treatment", "vertex", help="Vertex tested by a-fix and p-fix.")
@click.option(
    "--connectivity",
    type=click.Choice(["fixed", "original"]),
    default="fixed",
    show_default=True,
    help="Graph in which the NPS check judges bidirected connectivity.",
)
@format_option
def check(graph_path, criterion, vertex, connectivity, fmt):
    """Test a graphical criterion."""
    try:
        g = _graph(graph_path)
        if criterion in ("a-fix", "p-fix"):
            if not vertex:
                raise InputError(f"--vertex is required for {criterion}")
            test = is_fixable if criterion == "a-fix" else is_p_fixable
            ok = test(g, vertex)
            label = "a-fixable" if criterion == "a-fix" else "p-fixable"
            out = {"criterion": criterion, "vertex": vertex, "result": ok}
            _emit(out, fmt, f"{label}: {str(ok).lower()}")
        elif criterion == "nps":
            v = check_nps(g, connectivity=connectivity)
            out = {"criterion": criterion, "result": v.saturated}
            text = f"NPS: {str(v.saturated).lower()}"
            if v.witness:
                out["witness"] = list(v.witness)
                text += f", witness: ({','.join(v.witness)})"
            _emit(out, fmt, text)
        else:
            ok = is_mb_shielded(g)
            _emit({"criterion": criterion, "result": ok}, fmt, f"mb-shielded: {str(ok).lower()}")
    except AdmgError as exc:
        _fail(exc, fmt)


# ---------------------------------------------------------------- identify


@main.command(name="identify")
@click.option("--graph", "graph_path", required=True, type=click.Path(dir_okay=False))
@click.option("--treatment", required=True)
@click.option("--outcome", required=True)
@format_option
def identify_cmd(graph_path, treatment, outcome, fmt):
    """Find an identifying functional for the effect of a treatment on an outcome."""
    try:
        f = identify(_graph(graph_path), treatment, outcome)
    except AdmgError as exc:
        _fail(exc, fmt)
    if fmt == "json":
        click.echo(json.dumps(f.to_dict(), indent=2, sort_keys=True))
    else:
        click.echo(f"kind: {f.kind}")
        click.echo(f.rendered)
    if f.kind == NOT_IDENTIFIABLE:
        if fmt != "json":
            click.echo("not identifiable", err=True)
        sys.exit(EXIT_NOT_IDENTIFIABLE)


# ---------------------------------------------------------------- estimate


def _estimate(data, g, estimator, t, t_val, y, ncfg, options, contrast):
    from .estimate import ESTIMATORS

    fn = ESTIMATORS[estimator]
    r1 = fn(data, g, t, t_val, y, cfg=ncfg, **options)
    if not contrast:
        return r1, None
    r0 = fn(data, g, t, 1 - t_val, y, cfg=ncfg, **options)
    diff = r1.contributions - r0.contributions
    ace = {
        "ace": r1.psi_hat - r0.psi_hat,
        "se": float(np.std(diff, ddof=1) / np.sqrt(len(diff))),
        "reference": r0.to_dict(),
    }
    return r1, ace


def _estimator_names():
    from .estimate import ESTIMATORS

    return sorted(ESTIMATORS)


@main.command()
@click.option("--graph", "graph_path", required=True, type=click.Path(dir_okay=False))
@click.option("--data", "data_path", required=True, type=click.Path(dir_okay=False))
@click.option("--treatment", required=True)
@click.option("--outcome", required=True)
@click.option("--estimator", type=click.Choice(_estimator_names()), required=True)
@click.option("--t-value", type=click.IntRange(0, 1), default=1, show_default=True)
@click.option("--contrast/--no-contrast", default=False, help="Also report the effect of t versus 1-t.")
@click.option("--misspecify", default="", help='Dropped inputs, e.g. "T=C1,C2;outcome=C1".')
@click.option("--basis", type=click.IntRange(1, 6), default=1, show_default=True)
@click.option("--beta-basis", type=click.IntRange(1, 6), default=2, show_default=True)
@click.option("--eps", type=float, default=0.01, show_default=True, help="Probability clipping bound.")
@click.option("--front", default="", help="Comma-separated fixing order for the reweighted estimator.")
@click.option("--form", type=click.Choice(["integral", "ladder"]), default=None, help="APIPW form.")
@click.option("--contributions", "contrib_path", type=click.Path(dir_okay=False), help="Write per-row contributions.")
@format_option
def estimate(graph_path, data_path, treatment, outcome, estimator, t_value, contrast, misspecify,
             basis, beta_basis, eps, front, form, contrib_path, fmt):
    """Estimate the mean outcome under T=t from a CSV dataset."""
    from .estimate import NuisanceConfig
    from .nuisance import load_dataset, parse_misspecification

    try:
        g = _graph(graph_path)
        try:
            data = load_dataset(data_path)
        except OSError as exc:
            raise InputError(f"cannot read data {data_path!r}: {exc.strerror}") from exc
        ncfg = NuisanceConfig(parse_misspecification(misspecify), basis, beta_basis, eps)
        options = {}
        if front:
            if estimator != "reweighted":
                raise InputError("--front only applies to the reweighted estimator")
            options["z"] = _csv(front)
        if form:
            if estimator != "apipw":
                raise InputError("--form only applies to the apipw estimator")
            options["form"] = form
        res, ace = _estimate(data, g, estimator, treatment, t_value, outcome, ncfg, options, contrast)
    except AdmgError as exc:
        _fail(exc, fmt)
    if contrib_path:
        np.savetxt(contrib_path, res.contributions, fmt="%.17g", header="contribution", comments="")
    out = res.to_dict()
    out["treatment"], out["outcome"], out["t_value"] = treatment, outcome, t_value
    if ace is not None:
        out["contrast"] = ace
    text = [f"estimator: {res.estimator}", f"psi_hat({treatment}={t_value}): {res.psi_hat:.6f}", f"se: {res.se:.6f}"]
    if ace is not None:
        text.append(f"ace: {ace['ace']:.6f} (se {ace['se']:.6f})")
    text += [f"warning: {w}" for w in res.warnings]
    _emit(out, fmt, "\n".join(text))


# ---------------------------------------------------------------- simulate


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(dir_okay=False))
@click.option("--output-dir", type=click.Path(file_okay=False), help="Overrides output_dir in the config.")
@click.option("--workers", type=click.IntRange(1), default=None,
              help="Worker processes (default: ADMG_EFFECTS_WORKERS or 1).")
@format_option
def simulate(config_path, output_dir, workers, fmt):
    """Run a simulation study described by a JSON config."""
    from .sim import SimConfig, run_simulation

    try:
        try:
            with open(config_path, encoding="utf-8") as fh:
                raw = json.load(fh)
        except OSError as exc:
            raise InputError(f"cannot read config {config_path!r}: {exc.strerror}") from exc
        except json.JSONDecodeError as exc:
            raise InputError(f"config is not valid JSON: {exc}") from exc
        cfg = SimConfig.from_json(raw)
        if output_dir:
            cfg.output_dir = output_dir
        if workers:
            cfg.workers = workers
        reports, eff = run_simulation(cfg)
    except AdmgError as exc:
        _fail(exc, fmt)
    rows = [r.row() for r in reports]
    out = {"reports": rows, "efficiency": eff}
    lines = [f"{'scenario':<18}{'bias':>12}{'mc_se':>12}{'ratio':>9}"]
    for r in rows:
        lines.append(f"{r['scenario']:<18}{r['bias']:>12.5f}{r['mc_se']:>12.5f}{r['bias'] / r['mc_se']:>9.2f}")
    for e in eff:
        lines.append(f"{e['estimator']:<12} n={e['n']:<6} variance={e['variance']:.6f}")
    _emit(out, fmt, "\n".join(lines))


# ------------------------------------------------------------------ oracle


@main.command()
@click.option("--model", "model_path", type=click.Path(dir_okay=False), help="Discrete model JSON.")
@click.option("--graph", "graph_path", type=click.Path(dir_okay=False),
              help="Build a random binary model Markov to this graph instead.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--treatment", required=True)
@click.option("--outcome", required=True)
@click.option("--t-value", type=click.IntRange(0, 1), default=1, show_default=True)
@click.option("--write-model", type=click.Path(dir_okay=False), help="Save the model as JSON.")
@click.option("--sample", "n_sample", type=click.IntRange(1), help="Also draw this many rows.")
@click.option("--output", "sample_path", type=click.Path(dir_okay=False), help="CSV for --sample.")
@format_option
def oracle(model_path, graph_path, seed, treatment, outcome, t_value, write_model, n_sample, sample_path, fmt):
    """Exact ground truth and population values of every applicable estimator."""
    from .oracle import load_model, random_model_for

    try:
        if (model_path is None) == (graph_path is None):
            raise InputError("give exactly one of --model or --graph")
        if n_sample and not sample_path:
            raise InputError("--sample needs --output")
        if model_path:
            try:
                m = load_model(model_path)
            except OSError as exc:
                raise InputError(f"cannot read model {model_path!r}: {exc.strerror}") from exc
        else:
            m = random_model_for(np.random.default_rng(seed), _graph(graph_path))
        out = oracle_report(m, treatment, t_value, outcome)
        if write_model:
            with open(write_model, "w", encoding="utf-8") as fh:
                json.dump(m.to_json(), fh, indent=2)
        if n_sample:
            _write_sample(m, n_sample, seed, sample_path)
    except AdmgError as exc:
        _fail(exc, fmt)
    lines = [f"kind: {out['kind']}", f"truth: {out['truth']:.12f}"]
    lines += [f"{k}: {v:.12f}" for k, v in out["estimands"].items()]
    _emit(out, fmt, "\n".join(lines))


def oracle_report(m, t, t_val, y):
    """Truth and exact estimator values for the identification kind of ``m``."""
    from .oracle import exact_estimator_value, observed_joint, truth_psi

    g = m.admg()
    f = identify(g, t, y)
    p = observed_joint(m)
    out = {"kind": f.kind, "truth": truth_psi(m, t, t_val, y), "estimands": {}}
    if f.kind == NOT_IDENTIFIABLE:
        return out
    if f.kind == SEQUENTIAL_PFIX:
        names = ["reweighted_ee", "psi_nested"]
    elif f.nested is not None:
        names = ["psi_nested"]
    else:
        names = ["beta_primal", "beta_dual", "if_apipw", "psi_nested"]
        if is_fixable(f.graph, t):
            names.insert(2, "if_gaipw")
    psi = out["truth"]
    for name in names:
        z = f.front.vertices if name == "reweighted_ee" else None
        val = exact_estimator_value(p, name, g, t, t_val, y, z_sequence=z, psi=psi)
        out["estimands"][name] = float(val + psi if name.startswith("if_") else val)
    return out


def _write_sample(m, n, seed, path):
    from .nuisance import Dataset
    from .oracle import sample_model

    cols = sample_model(m, n, np.random.default_rng([seed, 1]))
    Dataset(cols, binary=frozenset(cols)).to_csv(path)


if __name__ == "__main__":
    main()
