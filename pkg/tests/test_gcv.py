import json

import numpy as np
import pytest

from freesketch import FitConfig, Mode, SketchedEnsemble, fit_ensemble, fit_ridge, make_sketch, predict
from freesketch.errors import (
    DegenerateDenominatorError,
    DegenerateLeverageError,
    InvalidArgumentError,
    SizeGuardError,
)
from freesketch.estimator import FitSpec, prepare_ensemble
from freesketch.gcv import (
    ABSOLUTE,
    SIGN_MISMATCH,
    SQUARED,
    ZERO,
    Estimator,
    GcvDistribution,
    RiskReport,
    functional_by_name,
    gcv_corrected_pairs,
    gcv_functional,
    gcv_squared_risk,
    huber,
    kfold_cv,
    loo_predictions,
    loocv_functional,
    prediction_interval,
    test_functional as evaluate_on_test,
    wasserstein2_joint,
    write_reports_csv,
)
from freesketch.harness import ExperimentConfig, SyntheticSpec, generate_synthetic, run_experiment

from conftest import gaussian_data


def ridge_gcv(X, y, lam):
    n = X.shape[0]
    L = X @ np.linalg.solve(X.T @ X / n + lam * np.eye(X.shape[1]), X.T) / n
    r = y - L @ y
    return np.mean(r**2) / (1 - np.trace(L) / n) ** 2


def test_gcv_infinite_lambda(small_data):
    X, y, _ = small_data
    m = fit_ensemble(X, y, "gaussian", 10, 2, 0, FitConfig(np.inf))
    assert gcv_squared_risk(m, X, y).value == pytest.approx(np.mean(y**2))
    pairs = gcv_corrected_pairs(m, X, y)
    assert np.allclose(pairs.pairs[:, 1], predict(m, X))


def test_gcv_identity_is_ridge_gcv(small_data):
    X, y, _ = small_data
    m = fit_ensemble(X, y, "identity", X.shape[1], 2, 0, FitConfig(0.7))
    assert gcv_squared_risk(m, X, y).value == pytest.approx(ridge_gcv(X, y, 0.7), rel=1e-12)


def test_functional_identities(small_data):
    X, y, _ = small_data
    m = fit_ensemble(X, y, "srdct", 15, 3, 1, FitConfig(0.3))
    g = gcv_squared_risk(m, X, y).value
    assert gcv_functional(m, X, y, SQUARED).value == pytest.approx(g, rel=1e-13)
    assert gcv_functional(m, X, y, ZERO).value == 0.0
    # z_i = (yhat_i - tr y_i)/(1 - tr) so that y - z = (y - yhat)/(1 - tr)
    d = gcv_corrected_pairs(m, X, y)
    assert np.mean(d.residuals**2) == pytest.approx(g, rel=1e-13)


def test_degenerate_denominator():
    X, y, _ = gaussian_data(10, 20, seed=0)
    m = fit_ensemble(X, y, "identity", 20, 1, 0, FitConfig(0.0))
    with pytest.raises(DegenerateDenominatorError):
        gcv_squared_risk(m, X, y)
    d = GcvDistribution(np.zeros((2, 2)), 1.0)
    assert d.degenerate


def test_functionals_by_name():
    assert functional_by_name("Squared") is SQUARED
    assert functional_by_name("sign") is SIGN_MISMATCH
    h = functional_by_name("huber(2)")
    assert h(np.array([0.0]), np.array([1.0]))[0] == 0.5
    assert h(np.array([0.0]), np.array([5.0]))[0] == pytest.approx(2 * (5 - 1))
    assert ABSOLUTE(np.array([1.0]), np.array([-2.0]))[0] == 3.0
    with pytest.raises(InvalidArgumentError):
        functional_by_name("hinge")
    with pytest.raises(InvalidArgumentError):
        huber(0.0)


@pytest.mark.parametrize("kind,K", [("gaussian", 1), ("countsketch", 3), ("srdct", 2)])
def test_loo_shortcut_matches_refits(kind, K, rng):
    n, p, q, lam = 15, 8, 5, 0.2
    X = rng.standard_normal((n, p))
    y = rng.standard_normal(n)
    m = fit_ensemble(X, y, kind, q, K, 3, FitConfig(lam))
    brute = np.empty(n)
    for i in range(n):
        keep = np.arange(n) != i
        # refit each member on n - 1 rows, keeping the 1/n normalization of the full fit
        preds = []
        for mem in m.members:
            A = mem.sketch.apply_right(X)[keep]
            b = np.linalg.solve(A.T @ A / n + lam * np.eye(q), A.T @ y[keep] / n)
            preds.append(mem.sketch.apply_right(X[i:i + 1]) @ b)
        brute[i] = np.mean(preds)
    assert np.max(np.abs(loo_predictions(m, X, y) - brute)) < 1e-8


def test_loo_shortcut_unsketched_matches_refit_with_own_normalization(rng):
    # ridge with normalization tied to the fitting sample size, refit at the rescaled level
    n, p, lam = 12, 5, 0.3
    X = rng.standard_normal((n, p))
    y = rng.standard_normal(n)
    m = SketchedEnsemble(Mode.UNSKETCHED, X, y, [None]).model(lam)
    brute = [X[i] @ fit_ridge(np.delete(X, i, 0), np.delete(y, i), lam * n / (n - 1))
             for i in range(n)]
    assert np.allclose(loo_predictions(m, X, y), brute, atol=1e-10)


def test_loocv_infinite_lambda(small_data):
    X, y, _ = small_data
    m = fit_ensemble(X, y, "gaussian", 10, 2, 0, FitConfig(np.inf))
    assert np.allclose(loo_predictions(m, X, y), 0)
    assert loocv_functional(m, X, y, ABSOLUTE).value == pytest.approx(np.mean(np.abs(y)))


def test_degenerate_leverage():
    X = np.eye(3)
    m = fit_ensemble(X, np.ones(3), "identity", 3, 1, 0, FitConfig(0.0))
    with pytest.raises(DegenerateLeverageError):
        loo_predictions(m, X, np.ones(3))


def test_prediction_interval_examples():
    r = np.array([0.3, -1.2, 2.5, 0.0])
    d = GcvDistribution(np.column_stack([r, np.zeros(4)]), 0.1)
    assert prediction_interval(d, 0, 1) == (-1.2, 2.5)
    d = GcvDistribution(np.array([[-1.0, 0.0], [1.0, 0.0]]), 0.0)
    assert prediction_interval(d, 0.25, 0.75) == (-1.0, 1.0)
    with pytest.raises(InvalidArgumentError):
        prediction_interval(d, 0.8, 0.2)


def test_kfold_constant_predictor(small_data):
    X, y, _ = small_data
    spec = FitSpec("gaussian", 10, 2, np.inf)
    val = kfold_cv(X, y, 4, spec).value
    from freesketch.sketching import derive_seed, make_rng
    perm = make_rng(derive_seed(spec.seed, 0xF01D)).permutation(len(y))
    expect = np.mean([np.mean(y[f] ** 2) for f in np.array_split(perm, 4)])
    assert val == pytest.approx(expect)


def test_kfold_with_n_folds_is_loocv(rng):
    n, p = 14, 6
    X = rng.standard_normal((n, p))
    y = rng.standard_normal(n)
    lam = 0.4
    # refits use the fold size for normalization, so compare against ridge refits
    spec = FitSpec("identity", p, 1, lam)
    brute = np.mean([(y[i] - X[i] @ fit_ridge(np.delete(X, i, 0), np.delete(y, i), lam)) ** 2
                     for i in range(n)])
    assert kfold_cv(X, y, n, spec).value == pytest.approx(brute, rel=1e-10)
    with pytest.raises(InvalidArgumentError):
        kfold_cv(X, y, 1, spec)


def test_test_functional_basics(small_data):
    X, y, _ = small_data
    m = fit_ensemble(X, y, "gaussian", 10, 2, 0, FitConfig(0.5))
    perfect = predict(m, X)
    assert evaluate_on_test(m, X, perfect).value == 0.0
    a = evaluate_on_test(m, X, y).value
    b = evaluate_on_test(m, np.vstack([X, X]), np.concatenate([y, y])).value
    assert a == pytest.approx(b)
    with pytest.raises(InvalidArgumentError):
        evaluate_on_test(m, X[:0], y[:0])


def test_test_risk_converges_to_population():
    X, y, truth = generate_synthetic(SyntheticSpec(200, 100, seed=3))
    m = fit_ensemble(X, y, "gaussian", 60, 2, 0, FitConfig(0.5))
    pop = truth.linear_risk(m.aggregated_beta)
    for n0 in (1000, 10000):
        X0, y0 = truth.sample(n0)
        losses = (y0 - predict(m, X0)) ** 2
        se = losses.std() / np.sqrt(n0)
        assert abs(losses.mean() - pop) < 4 * se


def test_report_serialization(tmp_path, small_data):
    X, y, _ = small_data
    m = fit_ensemble(X, y, "gaussian", 10, 2, 0, FitConfig(0.5))
    r = gcv_squared_risk(m, X, y)
    d = json.loads(r.to_json())
    assert d["estimator"] == "GCV" and d["K"] == 2 and d["kind"] == "gaussian"
    write_reports_csv([r, loocv_functional(m, X, y)], tmp_path / "r.csv")
    assert (tmp_path / "r.csv").read_text().count("\n") == 3
    with pytest.raises(InvalidArgumentError):
        RiskReport(Estimator.GCV, float("nan"), "squared")
    gcv_corrected_pairs(m, X, y).to_csv(tmp_path / "pairs.csv")
    assert np.loadtxt(tmp_path / "pairs.csv", delimiter=",", skiprows=1).shape == (len(y), 2)


def test_w2_examples(rng):
    A = rng.standard_normal((6, 2))
    assert wasserstein2_joint(A, A) == pytest.approx(0, abs=1e-12)
    assert wasserstein2_joint([[0, 0]], [[3, 4]]) == pytest.approx(5)
    # 1-D, equal sizes: sorted coupling
    a, b = rng.standard_normal(50), rng.standard_normal(50) + 1
    assert wasserstein2_joint(a[:, None], b[:, None]) == pytest.approx(
        np.sqrt(np.mean((np.sort(a) - np.sort(b)) ** 2)))


def test_w2_unequal_sizes_quantile_oracle(rng):
    a, b = rng.standard_normal(6), rng.standard_normal(4)
    # quantile coupling integrates (F^-1(u) - G^-1(u))^2 over u
    grid = np.union1d(np.arange(7) / 6, np.arange(5) / 4)
    mids = (grid[:-1] + grid[1:]) / 2
    qa = np.sort(a)[np.minimum((mids * 6).astype(int), 5)]
    qb = np.sort(b)[np.minimum((mids * 4).astype(int), 3)]
    oracle = np.sqrt(np.sum(np.diff(grid) * (qa - qb) ** 2))
    assert wasserstein2_joint(a[:, None], b[:, None]) == pytest.approx(oracle, rel=1e-7)


def test_w2_guards(monkeypatch):
    import freesketch.gcv as g
    monkeypatch.setattr(g, "W2_SIZE_LIMIT", 10)
    with pytest.raises(SizeGuardError):
        wasserstein2_joint(np.zeros((4, 2)), np.zeros((4, 2)))
    with pytest.raises(InvalidArgumentError):
        wasserstein2_joint(np.zeros((2, 2)), np.zeros((2, 3)))


# -- statistical checks at reference scale -----------------------------------


def test_gcv_matches_test_risk_per_trial():
    cfg = ExperimentConfig.preset("GcvPath", trials=20, kinds=["gaussian"], lambdas=[0.2], threads=1)
    rows = run_experiment(cfg)
    g = np.array([r["value"] for r in rows if r["estimator"] == "GCV"])
    t = np.array([r["value"] for r in rows if r["estimator"] == "TestOracle"])
    assert np.mean(np.abs(g - t) / t) < 0.05


def test_gcv_tracks_nonlinear_test_risk():
    cfg = ExperimentConfig.preset("GcvPath", trials=10, kinds=["srdct"], lambdas=[0.2],
                                  response="soft_threshold", n_test=5000, threads=1)
    rows = run_experiment(cfg)
    g = np.array([r["value"] for r in rows if r["estimator"] == "GCV"])
    t = np.array([r["value"] for r in rows if r["estimator"] == "TestOracle"])
    assert abs(g.mean() - t.mean()) / t.mean() < 0.05


def test_sign_mismatch_gcv_tracks_classification_error():
    cfg = ExperimentConfig.preset("GcvPath", trials=20, kinds=["gaussian"], lambdas=[0.2],
                                  response="binary_sign", functionals=["sign_mismatch"],
                                  estimators=["GCV", "TestOracle"], threads=1)
    rows = run_experiment(cfg)
    g = np.array([r["value"] for r in rows if r["estimator"] == "GCV"])
    t = np.array([r["value"] for r in rows if r["estimator"] == "TestOracle"])
    assert abs(g.mean() - t.mean()) < 0.03


def test_loocv_close_to_gcv():
    X, y, _ = generate_synthetic(SyntheticSpec(500, 600, seed=11))
    m = fit_ensemble(X, y, "gaussian", 441, 5, 0, FitConfig(0.2))
    g = gcv_squared_risk(m, X, y).value
    assert abs(loocv_functional(m, X, y).value - g) < 0.02 * g


def test_two_fold_cv_less_accurate_than_gcv():
    cfg = ExperimentConfig.preset("GcvPath", n=356, p=500, trials=10, kinds=["gaussian"],
                                  qs=[250], lambdas=[0.01], folds=2,
                                  estimators=["GCV", "KFold", "TestOracle"], threads=1)
    rows = run_experiment(cfg)
    get = lambda e: np.array([r["value"] for r in rows if r["estimator"] == e])
    t = get("TestOracle")
    assert np.mean(np.abs(get("KFold") - t)) > np.mean(np.abs(get("GCV") - t))


def test_w2_distance_shrinks_with_n():
    means = []
    for n in (300, 600, 1200):
        vals = []
        for trial in range(10):
            X, y, truth = generate_synthetic(SyntheticSpec(n, int(1.2 * n), seed=1000 * n + trial))
            m = fit_ensemble(X, y, "srdct", int(0.6 * n), 2, trial, FitConfig(0.5))
            pairs = gcv_corrected_pairs(m, X, y).pairs
            X0, y0 = truth.sample(2000)
            test_pairs = np.column_stack([y0, predict(m, X0)])
            # equal-size subsample keeps the transport problem an assignment
            idx = np.random.default_rng(trial).choice(2000, size=n, replace=False)
            vals.append(wasserstein2_joint(pairs, test_pairs[idx]))
        means.append(np.mean(vals))
    assert means[0] > means[1] > means[2]
