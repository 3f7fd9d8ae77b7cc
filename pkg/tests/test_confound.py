import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from residconf.confound import (
    CAUTION,
    SensitivityParams,
    block_indices,
    bootstrap_slopes,
    correct,
    corrected_estimate,
    corrected_variance,
    default_block_length,
    detect,
    fit_pair,
    interpret_lambda,
    lambda_sweep,
)
from residconf.errors import NumericalError, ValidationError
from residconf.glm import ModelSpec, build_design
from residconf.oracle import reference_dgp
from residconf.rng import substream
from residconf.simgen import simulate_gaussian_series

LINEAR = ModelSpec("linear", "y", "x")


@pytest.fixture(scope="module")
def confounded():
    d, _ = simulate_gaussian_series(reference_dgp(beta3=1.0, beta1=0.3), 1500, substream(11, 0))
    return d


@pytest.fixture(scope="module")
def pair(confounded):
    return fit_pair(confounded, LINEAR, bootstrap_b=200, seed=5)


@settings(max_examples=200)
@given(
    b1=st.floats(-1e3, 1e3, allow_nan=False),
    d1=st.floats(-1e3, 1e3, allow_nan=False),
    lam=st.floats(-50, 50, allow_nan=False),
)
def test_correct_identity(b1, d1, lam):
    assert abs(correct(b1, d1, lam) - (b1 * (1 + lam) - lam * d1)) <= 1e-12 * max(1.0, abs(b1), abs(d1)) * (1 + abs(lam))
    assert correct(b1, d1, 0.0) == b1


def test_pair_uses_common_rows(confounded, pair):
    assert pair.final.n_used == pair.extended.n_used == confounded.n - 1
    np.testing.assert_array_equal(pair.final.rows, pair.extended.rows)
    assert corrected_estimate(pair, 0.0) == pair.b1
    assert pair.b3 == pair.extended.coef("x_lead1")
    assert pair.rho == pytest.approx(np.corrcoef(confounded.exposure[:-1], confounded.exposure[1:])[0, 1])
    # no other regressors: the partial correlation reduces to the marginal one
    assert pair.rho_partial == pytest.approx(pair.rho, abs=1e-12)


def test_corrected_variance_quadratic_form(pair):
    S = np.array([[pair.var_b1, pair.cov_b1_d1], [pair.cov_b1_d1, pair.var_d1]])
    assert np.linalg.eigvalsh(S)[0] >= 0
    for lam in (-1.5, 0.4, 1.0 / pair.rho, 3.0):
        w = np.array([1 + lam, -lam])
        assert corrected_variance(pair, lam) == pytest.approx(w @ S @ w, rel=1e-12)
    assert corrected_variance(pair, 0.0) == pair.var_b1


def test_variance_needs_covariance(confounded):
    p = fit_pair(confounded, LINEAR, bootstrap_b=0)
    assert corrected_variance(p, 0.0) == p.var_b1
    with pytest.raises(ValidationError, match="bootstrap"):
        corrected_variance(p, 1.0)


def test_negative_variance_handling(confounded):
    p = fit_pair(confounded, LINEAR, bootstrap_b=0)
    p.cov_b1_d1 = math.sqrt(p.var_b1 * p.var_d1) * 5
    with pytest.raises(NumericalError):
        corrected_variance(p, 1.0)
    # tiny negative values from round-off are clamped with a warning
    lam = 1.0
    vb, vd = p.var_b1, p.var_d1
    p.cov_b1_d1 = ((1 + lam) ** 2 * vb + lam**2 * vd) / (2 * lam * (1 + lam)) * (1 + 1e-9)
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        assert corrected_variance(p, lam) == 0.0
    assert any(issubclass(w.category, RuntimeWarning) for w in rec)


def test_default_grid():
    rho = 0.6
    g = SensitivityParams().grid(rho)
    assert g.size == 21
    assert np.all(np.diff(g) > 0)
    assert 0.0 in g and (1 / rho) in g
    assert g[0] == pytest.approx(-1 / rho) and g[-1] == pytest.approx(3 / rho)
    custom = SensitivityParams(center=2.0, span=0.5, count=5).grid(rho)
    np.testing.assert_allclose(custom, [0.0, 1.5, 1.75, 2.0, 2.25, 2.5])
    assert list(SensitivityParams(lambda_values=(2.0, -1.0, 2.0)).grid(rho)) == [-1.0, 2.0]
    with pytest.raises(ValidationError):
        SensitivityParams(lambda_values=()).grid(rho)
    with pytest.raises(ValidationError):
        SensitivityParams().grid(0.0)


def test_interpretation_tags():
    rho = 0.5
    assert interpret_lambda(-0.1, rho) == "opposite-direction"
    assert interpret_lambda(0.0, rho) == "no-confounding"
    assert interpret_lambda(2.0, rho) == "equal"
    assert interpret_lambda(1.0, rho) == "weaker-with-X_t"
    assert interpret_lambda(3.0, rho) == "stronger-with-X_t"


def test_sweep_outputs(pair):
    res = lambda_sweep(pair)
    rows = res.rows()
    assert len(rows) == 21
    zero = next(r for r in rows if r["lambda"] == 0.0)
    assert zero["estimate"] == pair.b1 and zero["interpretation"] == "no-confounding"
    assert sum(r["interpretation"] == "equal" for r in rows) == 1
    for r in rows:
        assert r["ci_lo"] <= r["estimate"] <= r["ci_hi"]
        half = 1.959963984540054 * math.sqrt(r["variance"])
        assert r["ci_hi"] - r["estimate"] == pytest.approx(half, rel=1e-9)
    lines = res.to_csv().splitlines()
    assert lines[0] == "lambda,estimate,variance,ci_lo,ci_hi,interpretation"
    assert len(lines) == 22
    assert res.to_dict()["bootstrap"]["replicates"] == 200


def test_detection_strong_confounder(pair):
    rep = detect(pair)
    assert rep.reject and rep.wald.p < 0.05
    out = rep.to_dict()
    assert set(out) >= {"b3", "se", "z", "p", "verdict"}
    assert out["caution"] == CAUTION


def test_block_length_rule():
    assert default_block_length(1) == 1
    assert default_block_length(8) == 2
    assert default_block_length(9) == 3
    assert default_block_length(1000) == 10
    assert default_block_length(1001) == 11


def test_block_indices_structure():
    rng = np.random.default_rng(0)
    idx = block_indices(103, 10, rng)
    assert idx.size == 103
    assert idx.min() >= 0 and idx.max() < 103
    blocks = idx[:100].reshape(10, 10)
    assert np.all(np.diff(blocks, axis=1) == 1)
    with pytest.raises(ValidationError):
        block_indices(5, 6, rng)


def test_fast_bootstrap_matches_refits(confounded):
    des = build_design(confounded, LINEAR.with_indicator(True))
    fast = bootstrap_slopes(des, "linear", "x", "x_lead1", reps=30, seed=3, key=(1,))
    slow = bootstrap_slopes(des, "linear", "x", "x_lead1", reps=30, seed=3, key=(1,), fast=False)
    np.testing.assert_allclose(fast[0], slow[0], atol=1e-10)
    np.testing.assert_allclose(fast[1], slow[1], atol=1e-10)
    again = bootstrap_slopes(des, "linear", "x", "x_lead1", reps=30, seed=3, key=(1,))
    assert again[0].tobytes() == fast[0].tobytes()


def test_poisson_pair_and_bootstrap():
    dgp = reference_dgp(beta3=0.1, beta1=0.05, family="poisson", beta0=2.0)
    d, _ = simulate_gaussian_series(dgp, 400, substream(2, 0))
    p = fit_pair(d, ModelSpec("poisson", "y", "x"), bootstrap_b=40, seed=1)
    assert p.bootstrap.n_failed == 0
    assert -1 <= p.bootstrap.corr <= 1
    assert math.isfinite(corrected_variance(p, 1.5))


def test_sweep_identity_and_monotone(pair):
    res = lambda_sweep(pair)
    gap = pair.d1 - pair.b1
    for lam, est in zip(res.lambda_grid, res.estimates):
        assert est - pair.b1 == pytest.approx(-lam * gap, abs=1e-12)
    steps = np.diff(res.estimates)
    assert np.all(np.sign(steps) == np.sign(pair.b1 - pair.d1))
