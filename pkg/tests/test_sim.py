import csv
import json

import numpy as np
import pytest

from admg_effects import fixture
from admg_effects.errors import InputError
from admg_effects.graph import Admg
from admg_effects.sim import (
    DEFAULT_BINARY,
    EXPERIMENTS,
    SimConfig,
    build_scm,
    run_simulation,
    sample,
    select_scm_seed,
    treatment_overlap,
    trial_seed,
    true_ace,
)


def test_same_seed_same_data():
    s = build_scm(fixture("instruments"), 5, DEFAULT_BINARY["instruments"])
    a, b = sample(s, 300, 11), sample(s, 300, 11)
    assert all(a[v].tobytes() == b[v].tobytes() for v in a.columns)
    c = sample(s, 300, 12)
    assert not np.array_equal(a["Y"], c["Y"])


def test_scm_matches_graph_structure():
    g = fixture("shielded")
    s = build_scm(g, 1, DEFAULT_BINARY["shielded"])
    assert len(s.hidden) == 2 * len(g.bidirected)
    assert [h.kind for h in s.hidden[:2]] == ["bernoulli", "uniform"]
    for v in g.random:
        observed = {p for p in s.coefficients[v] if p in g.random}
        assert observed == set(g.parents(v))
    for a, b in g.bidirected:
        assert set(s.hidden_parents[a]) & set(s.hidden_parents[b])


def test_no_hidden_variables_without_bidirected_edges():
    g = Admg(random=["C", "T", "Y"], directed=[("C", "T"), ("C", "Y"), ("T", "Y")])
    assert build_scm(g, 0, {"T"}).hidden == ()


def test_binary_columns_are_binary():
    d = sample(build_scm(fixture("nested"), 2, DEFAULT_BINARY["nested"]), 500, 0)
    for v in DEFAULT_BINARY["nested"]:
        assert set(np.unique(d[v])) <= {0.0, 1.0}
    assert len(np.unique(d["Y"])) == 500


def test_no_directed_path_means_zero_effect():
    g = Admg(random=["T", "Y"], directed=[], bidirected=[("T", "Y")])
    ace, se = true_ace(build_scm(g, 3, {"T"}), "T", "Y", n=20_000)
    assert ace == 0.0 and se == 0.0


def test_linear_chain_effect_is_product_of_coefficients():
    g = Admg(random=["T", "M", "Y"], directed=[("T", "M"), ("M", "Y")])
    s = build_scm(g, 4, {"T"})
    ace, se = true_ace(s, "T", "Y", n=50_000)
    assert ace == pytest.approx(s.coefficients["M"]["T"] * s.coefficients["Y"]["M"], abs=1e-9)


def test_unknown_binary_vertex_rejected():
    with pytest.raises(InputError):
        build_scm(fixture("instruments"), 0, {"Q"})


def test_unknown_config_key_rejected():
    with pytest.raises(InputError, match="unknown"):
        SimConfig.from_json({"simulation": "sim1", "nn": 5})


def test_unknown_simulation_rejected():
    with pytest.raises(InputError):
        run_simulation(SimConfig(simulation="sim9", trials=2))


def test_selected_seeds_have_overlap():
    expected = {"instruments": 68, "shielded": 8, "sequential": 2, "nested": 37}
    for name, seed in expected.items():
        assert select_scm_seed(fixture(name), "T", DEFAULT_BINARY[name]) == seed
        assert treatment_overlap(build_scm(fixture(name), seed, DEFAULT_BINARY[name]), "T") <= 0.05


def test_trial_seeds_are_distinct():
    seeds = {trial_seed(0, s, k) for s in range(4) for k in range(100)}
    assert len(seeds) == 400


def test_experiments_cover_four_settings():
    assert {e.estimator for e in EXPERIMENTS.values()} == {"gaipw", "apipw", "reweighted", "anipw"}
    assert all(len(e.scenarios) == 4 for e in EXPERIMENTS.values())


def _read(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def test_outputs_are_reproducible(tmp_path):
    cfg = dict(simulation="sim1", n=300, trials=3, truth_draws=20_000, n_grid=[300])
    run_simulation(SimConfig(**cfg, output_dir=str(tmp_path / "a")))
    run_simulation(SimConfig(**cfg, output_dir=str(tmp_path / "b"), workers=2))
    names = ["summary.csv", "efficiency_table.csv", "metadata.json"] + [
        f"boxplot_{s.label}.csv" for s in EXPERIMENTS["sim1"].scenarios
    ]
    for name in names:
        a = (tmp_path / "a" / name).read_bytes()
        b = (tmp_path / "b" / name).read_bytes()
        if name == "metadata.json":
            a, b = json.loads(a), json.loads(b)
            a["config"].pop("workers"), b["config"].pop("workers")
        assert a == b, name
    rows = _read(tmp_path / "a" / "summary.csv")
    assert [r["scenario"] for r in rows] == ["both_correct", "propensity_wrong", "outcome_wrong", "both_wrong"]
    assert all(int(r["n_trials"]) == 3 for r in rows)
    assert len(_read(tmp_path / "a" / "boxplot_both_correct.csv")) == 3


def test_bias_shrinks_with_sample_size():
    small, _ = run_simulation(SimConfig(simulation="sim2", n=300, trials=30, truth_draws=100_000))
    large, _ = run_simulation(SimConfig(simulation="sim2", n=3000, trials=30, truth_draws=100_000))
    s, l = small[0], large[0]
    assert l.variance < s.variance
    assert abs(l.bias) < max(abs(s.bias), 3 * l.mc_se)


def test_custom_graph_simulation(tmp_path):
    path = tmp_path / "g.txt"
    path.write_text("V C\nV T\nV Y\nC -> T\nC -> Y\nT -> Y\n", encoding="utf-8")
    cfg = SimConfig(
        custom={"graph": str(path), "estimator": "gaipw", "binary": ["T"]},
        n=500, trials=4, truth_draws=20_000,
    )
    reports, eff = run_simulation(cfg)
    assert [r.scenario for r in reports] == ["default"] and eff == []
    assert abs(reports[0].bias) < 5 * reports[0].mc_se + 0.05
