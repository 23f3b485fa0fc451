import json
import math

import numpy as np
import pytest

from admg_effects.errors import FitError, InputError
from admg_effects.nuisance import (
    BINARY,
    GAUSSIAN,
    Dataset,
    ModelSpec,
    basis_terms,
    cond_density,
    density_ratio,
    fit,
    load_dataset,
    mean,
    parse_misspecification,
    probability,
    regress_beta,
)


def logistic(x):
    return 1.0 / (1.0 + np.exp(-x))


def binary_data(rng, n, coef=(-0.4, 1.1, -0.8)):
    c = rng.normal(size=n)
    t = (rng.random(n) < 0.5).astype(float)
    m = (rng.random(n) < logistic(coef[0] + coef[1] * t + coef[2] * c)).astype(float)
    return Dataset({"C": c, "T": t, "M": m}, binary={"T", "M"})


# --------------------------------------------------------------- dataset


def test_dataset_validation():
    with pytest.raises(InputError):
        Dataset({"A": [1, 2], "B": [1]})
    with pytest.raises(InputError):
        Dataset({"A": [0, 2]}, binary={"A"})
    with pytest.raises(InputError):
        Dataset({"A": [0, 1]}, weights=[1.0, 0.0])
    with pytest.raises(InputError):
        Dataset({"A": [0, 1]})["B"]


def test_csv_round_trip_and_binary_inference(tmp_path):
    d = Dataset({"A": [0, 1, 1], "B": [0.5, -1.25, 3.0], "C": [1, 0, 1]}, binary={"A", "C"})
    path = tmp_path / "d.csv"
    d.to_csv(path)
    back = load_dataset(path)
    assert back.binary == {"A", "C"}
    for k in d.columns:
        np.testing.assert_array_equal(back[k], d[k])
    (tmp_path / "d.schema.json").write_text(json.dumps({"continuous": ["C"]}))
    assert load_dataset(path).binary == {"A"}


def test_csv_errors(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("A,B\n1,2\n3\n")
    with pytest.raises(InputError, match="line 3"):
        load_dataset(path)
    path.write_text("A,B\n1,x\n")
    with pytest.raises(InputError, match="line 2"):
        load_dataset(path)
    path.write_text("")
    with pytest.raises(InputError, match="empty"):
        load_dataset(path)


# ------------------------------------------------------------------ specs


def test_spec_invariants():
    with pytest.raises(InputError):
        ModelSpec("Y", ("Y", "X"), GAUSSIAN)
    with pytest.raises(InputError):
        ModelSpec("Y", ("X",), GAUSSIAN, dropped={"Z"})
    with pytest.raises(InputError):
        ModelSpec("Y", ("X",), "poisson")
    assert ModelSpec("Y", ("X", "Z"), GAUSSIAN, dropped={"Z"}).inputs == ("X",)


def test_basis_terms_skip_binary_powers():
    terms = basis_terms(("A", "X"), 2, binary={"A"})
    assert terms == ((), ("A",), ("X",), ("A", "X"), ("X", "X"))


def test_parse_misspecification():
    got = parse_misspecification("T=C1, C2; outcome=C1;T=Z")
    assert got == {"T": {"C1", "C2", "Z"}, "outcome": {"C1"}}
    assert parse_misspecification("") == {}
    with pytest.raises(InputError):
        parse_misspecification("T")


# -------------------------------------------------------------------- fit


def test_exact_linear_fit():
    x = np.arange(10.0)
    d = Dataset({"x": x, "y": 2 * x + 1})
    f = fit(d, ModelSpec("y", ("x",), GAUSSIAN))
    np.testing.assert_allclose(f.coefficients, [1.0, 2.0], atol=1e-12)
    assert f.residual_variance < 1e-20


def test_equal_weights_match_unweighted(rng):
    d = binary_data(rng, 500)
    spec = ModelSpec("M", ("T", "C"), BINARY)
    a = fit(d, spec)
    b = fit(d, spec, weights=np.full(d.n, 3.7))
    np.testing.assert_allclose(a.coefficients, b.coefficients, atol=1e-10)
    g = ModelSpec("C", ("T",), GAUSSIAN)
    np.testing.assert_allclose(fit(d, g).coefficients, fit(d, g, weights=np.full(d.n, 0.2)).coefficients, atol=1e-12)


def test_logistic_recovers_known_coefficients():
    rng = np.random.default_rng(11)
    true = np.array([-0.4, 1.1, -0.8])
    d = binary_data(rng, 50_000, tuple(true))
    f = fit(d, ModelSpec("M", ("T", "C"), BINARY))
    assert f.converged
    x = np.column_stack([np.ones(d.n), d["T"], d["C"]])
    p = logistic(x @ true)
    se = np.sqrt(np.diag(np.linalg.inv((x * (p * (1 - p))[:, None]).T @ x)))
    assert np.all(np.abs(f.coefficients - true) < 3 * se)


def test_integer_weights_match_duplicated_rows(rng):
    d = binary_data(rng, 300)
    k = rng.integers(1, 4, size=d.n)
    dup = Dataset({c: np.repeat(v, k) for c, v in d.columns.items()}, binary=d.binary)
    spec = ModelSpec("M", ("T", "C"), BINARY, basis=2)
    np.testing.assert_allclose(fit(d, spec, weights=k).coefficients, fit(dup, spec).coefficients, atol=1e-8)


def test_singular_design_names_columns():
    x = np.arange(20.0)
    d = Dataset({"x": x, "x2": 2 * x, "y": x})
    with pytest.raises(FitError, match="x2"):
        fit(d, ModelSpec("y", ("x", "x2"), GAUSSIAN))


def test_too_few_rows_and_single_class():
    d = Dataset({"x": [0.0, 1.0], "y": [0.0, 1.0]}, binary={"y"})
    with pytest.raises(FitError, match="rows"):
        fit(d, ModelSpec("y", ("x",), GAUSSIAN))
    d = Dataset({"x": [0.0, 1.0, 2.0, 3.0], "y": [1.0, 1.0, 1.0, 1.0]}, binary={"y"})
    with pytest.raises(FitError, match="both classes"):
        fit(d, ModelSpec("y", ("x",), BINARY))


def test_separation_is_flagged_not_fatal():
    x = np.linspace(-1, 1, 40)
    d = Dataset({"x": x, "y": (x > 0).astype(float)}, binary={"y"})
    f = fit(d, ModelSpec("y", ("x",), BINARY))
    assert not f.converged and np.all(np.isfinite(f.coefficients))


def test_fit_is_deterministic(rng):
    d = binary_data(rng, 400)
    spec = ModelSpec("M", ("T", "C"), BINARY, basis=3)
    assert np.array_equal(fit(d, spec).coefficients, fit(d, spec).coefficients)


def test_missing_column():
    d = Dataset({"x": np.arange(5.0), "y": np.arange(5.0)})
    f = fit(d, ModelSpec("y", ("x",), GAUSSIAN))
    with pytest.raises(InputError):
        mean(f, Dataset({"z": np.arange(5.0)}))


# ------------------------------------------------------------- densities


def test_binary_densities_sum_to_one(rng):
    d = binary_data(rng, 400)
    f = fit(d, ModelSpec("M", ("T", "C"), BINARY))
    one = cond_density(f, d, value=np.ones(d.n), clip=False)
    zero = cond_density(f, d, value=np.zeros(d.n), clip=False)
    np.testing.assert_allclose(one + zero, 1.0, atol=1e-15)


def test_gaussian_density_at_mean(rng):
    d = Dataset({"x": rng.normal(size=200), "y": rng.normal(size=200)})
    f = fit(d, ModelSpec("y", ("x",), GAUSSIAN))
    got = cond_density(f, d, value=mean(f, d))
    np.testing.assert_allclose(got, 1 / math.sqrt(2 * math.pi * f.residual_variance), rtol=1e-14)


def test_clipping_bounds():
    x = np.linspace(-6, 6, 400)
    rng = np.random.default_rng(0)
    d = Dataset({"x": x, "y": (rng.random(400) < logistic(3 * x)).astype(float)}, binary={"y"})
    f = fit(d, ModelSpec("y", ("x",), BINARY), eps=0.02)
    p = probability(f, d)
    assert p.min() == pytest.approx(0.02) and p.max() == pytest.approx(0.98)
    dens = cond_density(f, d)
    assert np.all(np.isfinite(dens)) and np.all(dens > 0)


def test_ratio_with_observed_clamp_is_one(rng):
    d = binary_data(rng, 300)
    f = fit(d, ModelSpec("M", ("T", "C"), BINARY))
    treated = Dataset({k: v[d["T"] == 1] for k, v in d.columns.items()}, binary=d.binary)
    np.testing.assert_allclose(density_ratio(f, treated, {"T": 1}), 1.0, atol=1e-15)


def test_dual_weight_matches_hand_formula(rng):
    d = binary_data(rng, 1000)
    f = fit(d, ModelSpec("M", ("T", "C"), BINARY))
    b0, b1, b2 = f.coefficients
    p_obs = logistic(b0 + b1 * d["T"] + b2 * d["C"])
    p_one = logistic(b0 + b1 + b2 * d["C"])
    want = np.where(d["M"] == 1, p_one / p_obs, (1 - p_one) / (1 - p_obs))
    np.testing.assert_allclose(density_ratio(f, d, {"T": 1}), want, rtol=1e-12)


def test_ratio_is_one_without_treatment_effect(rng):
    d = binary_data(rng, 200)
    f = fit(d, ModelSpec("M", ("T", "C"), BINARY))
    f.coefficients = np.array([f.coefficients[0], 0.0, f.coefficients[2]])
    np.testing.assert_allclose(density_ratio(f, d, {"T": 1}), 1.0, atol=1e-15)


def test_ratio_rejects_clamp_outside_inputs(rng):
    d = binary_data(rng, 100)
    f = fit(d, ModelSpec("M", ("C",), BINARY))
    with pytest.raises(InputError):
        density_ratio(f, d, {"T": 1})


# --------------------------------------------------------- beta regressions


def test_constant_regression_is_weighted_mean(rng):
    d = Dataset({"x": rng.normal(size=50)})
    beta = rng.normal(size=50)
    w = rng.uniform(0.5, 2.0, size=50)
    f = regress_beta(d, beta, (), weights=w)
    assert f.coefficients[0] == pytest.approx(np.average(beta, weights=w), abs=1e-12)


def test_linear_beta_has_zero_residuals(rng):
    d = Dataset({"x": rng.normal(size=50), "z": rng.normal(size=50)})
    beta = 0.5 - d["x"] + 2 * d["z"]
    f = regress_beta(d, beta, ("x", "z"))
    np.testing.assert_allclose(mean(f, d), beta, atol=1e-12)


def test_quadratic_beta_recovered_with_degree_two(rng):
    d = Dataset({"x": rng.normal(size=80), "z": rng.normal(size=80)})
    beta = 1 + d["x"] ** 2 - 0.5 * d["x"] * d["z"] + 0.25 * d["z"]
    f = regress_beta(d, beta, ("x", "z"), basis=2)
    np.testing.assert_allclose(mean(f, d), beta, atol=1e-8)


def test_regress_beta_length_check(rng):
    with pytest.raises(InputError):
        regress_beta(Dataset({"x": np.arange(4.0)}), np.zeros(3), ("x",))
