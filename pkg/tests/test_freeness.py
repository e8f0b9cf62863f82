import numpy as np
import pytest

from freesketch import make_sketch
from freesketch.errors import InvalidArgumentError
from freesketch.freeness import (
    WORDS,
    PolynomialWord,
    alternating_trace,
    centered_poly,
    curve_deviation,
    logistic_diagonal,
    subordination_scatter,
    write_scatter_csv,
    write_trace_csv,
)
from freesketch.sketching import SketchKind, SketchOperator


def dense_word(A, B, word):
    p = A.shape[0]
    out = np.eye(p)
    for m, e in word.factors():
        out = out @ centered_poly(A if m == "A" else B, e)
    return np.trace(out) / p


def test_centered_poly_examples():
    assert np.allclose(centered_poly(np.eye(3), 4), 0)
    A = np.diag([1.0, 2.0])
    assert np.allclose(centered_poly(A, 2), np.diag([-1.5, 1.5]))
    M = np.random.default_rng(0).standard_normal((5, 5))
    assert abs(np.trace(centered_poly(M + M.T, 3))) < 1e-10
    with pytest.raises(InvalidArgumentError):
        centered_poly(A, 0)


def test_word_structure():
    assert str(WORDS[0]) == "A1B2A2B3"
    assert str(WORDS[1]) == "A3B1A4B2"
    assert PolynomialWord((1, 2), (1,)).factors() == [("A", 1), ("B", 1), ("A", 2)]
    for bad in [((), (1,)), ((1,), (1, 2, 3)), ((0,), (1,))]:
        with pytest.raises(InvalidArgumentError):
            PolynomialWord(*bad)


def test_control_case_is_eigenvalue_variance():
    a = np.linspace(0.5, 1.5, 12)
    S = SketchOperator(SketchKind.GAUSSIAN, 12, 12, 0, _dense=np.diag(np.sqrt(a)))
    val = alternating_trace(a, S, PolynomialWord((1,), (1,)))
    assert val == pytest.approx(np.var(a))


def test_identity_sketch_kills_b_factors():
    a = np.linspace(0.5, 1.5, 10)
    S = make_sketch("identity", 10, 10, 0)
    for w in WORDS:
        assert alternating_trace(a, S, w) == pytest.approx(0, abs=1e-12)


@pytest.mark.parametrize("kind", ["countsketch", "srdct", "gaussian"])
@pytest.mark.parametrize("word", WORDS + (PolynomialWord((2, 1, 1), (1, 2)),))
def test_matches_dense_product(kind, word, rng):
    p = 16
    a = rng.uniform(0.5, 1.5, p)
    S = make_sketch(kind, p, 9, 3)
    M = S.materialize()
    assert alternating_trace(a, S, word) == pytest.approx(dense_word(np.diag(a), M @ M.T, word), abs=1e-10)
    # a full symmetric A goes through its eigenbasis
    Q, _ = np.linalg.qr(rng.standard_normal((p, p)))
    A = Q @ np.diag(a) @ Q.T
    assert alternating_trace(A, S, word) == pytest.approx(dense_word(A, M @ M.T, word), abs=1e-9)


def test_shape_checks():
    S = make_sketch("srdct", 8, 4, 0)
    with pytest.raises(InvalidArgumentError):
        alternating_trace(np.ones(7), S, WORDS[0])
    with pytest.raises(InvalidArgumentError):
        alternating_trace(np.eye(7), S, WORDS[0])


def test_logistic_family():
    a = logistic_diagonal(50, 1.0, 0.1, 0.5)
    assert np.all(a > 0) and np.all(np.diff(a) > 0)
    lit = logistic_diagonal(5, 2.0, 0.5, 0.25, literal=True)
    t = np.linspace(0, 1, 5)
    t[1] += 1e-9
    assert np.allclose(lit, 2.0 / (1 - np.exp(-(t - 0.25) / 0.5)))


def test_scatter_identity_ratio_one():
    a = logistic_diagonal(40, 1.0, 0.3, 0.5)
    pts = subordination_scatter(a, make_sketch("identity", 40, 40, 0), [0.1, 1.0, 10.0])
    assert np.allclose([r for _, r in pts], 1.0, atol=1e-9)


def test_scatter_decreasing_in_trace_arg():
    a = logistic_diagonal(300, 1.0, 0.3, 0.5)
    pts = subordination_scatter(a, "srdct", np.logspace(-2, 2, 9), alpha=0.6, seed=1)
    pts.sort()
    assert np.all(np.diff([r for _, r in pts]) < 0)
    dev = curve_deviation(pts, "orthogonal", 0.6)
    assert dev.shape == (9,)
    with pytest.raises(InvalidArgumentError):
        subordination_scatter(a, "srdct", [1.0])


def test_csv_writers(tmp_path):
    write_scatter_csv([{"family": "srdct", "p": 10, "q": 5, "lambda": 1.0, "trace_arg": -0.3,
                        "mu_over_lambda": 1.2}], tmp_path / "s.csv")
    write_trace_csv([{"word": "A1B2A2B3", "p": 10, "value": 0.01, "trial": 0}], tmp_path / "t.csv")
    assert (tmp_path / "t.csv").read_text().splitlines()[0] == "word,p,value,trial"
    assert (tmp_path / "s.csv").read_text().splitlines()[0].startswith("family,p,q,lambda")
