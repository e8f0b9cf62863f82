import numpy as np
import pytest
import scipy.sparse as sp

from freesketch import SketchKind, apply_right, apply_transpose, make_sketch, materialize
from freesketch.errors import InvalidArgumentError, SizeGuardError
from freesketch.sketching import SketchOperator, derive_seed, member_sketches

KINDS = ["gaussian", "orthogonal", "countsketch", "srdct"]


def test_identity_materializes_to_eye():
    assert np.array_equal(materialize(make_sketch("identity", 4, 4, 0)), np.eye(4))


def test_countsketch_structure():
    M = materialize(make_sketch("countsketch", 6, 3, 1))
    assert np.count_nonzero(M) == 6
    assert set(np.unique(M[M != 0])) <= {-1.0, 1.0}
    assert np.array_equal(np.count_nonzero(M, axis=1), np.ones(6))
    assert np.allclose(np.abs(M).sum(axis=1), 1.0)


@pytest.mark.parametrize("seed", [0, 3, 11])
def test_orthogonal_scaling(seed):
    M = materialize(make_sketch("orthogonal", 8, 4, seed))
    assert np.max(np.abs(M.T @ M - 2 * np.eye(4))) < 1e-10
    # dense QR oracle: same column space, same scaling
    Q, _ = np.linalg.qr(M)
    assert np.allclose(Q @ Q.T @ M, M)


def test_gaussian_diag_moment():
    p, q = 200, 156
    M = materialize(make_sketch("gaussian", p, q, 5))
    assert abs(np.mean(np.sum(M**2, axis=1)) - 1) < 3 * np.sqrt(2 / q) / np.sqrt(p)


@pytest.mark.parametrize("kind", KINDS + ["identity"])
def test_apply_right_matches_dense(kind, rng):
    p = 7
    q = p if kind == "identity" else 3
    S = make_sketch(kind, p, q, 2)
    X = rng.standard_normal((5, p))
    assert np.allclose(apply_right(X, S), X @ materialize(S), atol=1e-12)
    assert np.allclose(apply_right(np.eye(p), S), materialize(S), atol=1e-12)
    assert np.allclose(apply_right(sp.csr_matrix(X), S), X @ materialize(S), atol=1e-12)


@pytest.mark.parametrize("kind", KINDS)
def test_transpose_and_apply_match_dense(kind, rng):
    S = make_sketch(kind, 9, 4, 3)
    M = materialize(S)
    x = rng.standard_normal(9)
    B = rng.standard_normal((4, 2))
    assert np.allclose(apply_transpose(S, x), M.T @ x)
    assert np.allclose(S.apply(B), M @ B)
    assert np.allclose(apply_transpose(S, np.zeros(9)), 0)


def test_identity_passes_through(rng):
    S = make_sketch("identity", 5, 5, 0)
    X = rng.standard_normal((3, 5))
    assert np.array_equal(apply_right(X, S), X)
    x = rng.standard_normal(5)
    assert np.array_equal(apply_transpose(S, x), x)


def test_full_srdct_is_isometry(rng):
    S = make_sketch("srdct", 64, 64, 4)
    x = rng.standard_normal(64)
    assert abs(np.linalg.norm(apply_transpose(S, x)) - np.linalg.norm(x)) < 1e-10


def test_gram_matches_dense(rng):
    S = make_sketch("srdct", 10, 6, 1)
    A = rng.standard_normal((10, 10))
    A = A @ A.T
    M = materialize(S)
    assert np.allclose(S.gram(A), M.T @ A @ M)


def test_determinism_and_roundtrip():
    a = make_sketch("countsketch", 20, 7, 99)
    b = SketchOperator.from_dict(a.to_dict())
    assert np.array_equal(materialize(a), materialize(b))
    c = make_sketch("countsketch", 20, 7, 100)
    assert not np.array_equal(materialize(a), materialize(c))


def test_member_seeds_are_distinct():
    sk = member_sketches("gaussian", 10, 4, 3, seed=1)
    assert len({s.seed for s in sk}) == 3
    assert sk[0].seed == derive_seed(1, 0)


def test_kind_parsing():
    assert SketchKind.parse("CountSketch") is SketchKind.COUNTSKETCH
    assert SketchKind.parse("iid") is SketchKind.GAUSSIAN
    assert SketchKind.parse("dct") is SketchKind.SRDCT
    with pytest.raises(InvalidArgumentError):
        SketchKind.parse("hadamard")


@pytest.mark.parametrize("kind,p,q", [("orthogonal", 3, 5), ("srdct", 3, 4), ("identity", 3, 2),
                                      ("gaussian", 0, 2)])
def test_invalid_shapes(kind, p, q):
    with pytest.raises(InvalidArgumentError):
        make_sketch(kind, p, q, 0)


def test_dimension_mismatch(rng):
    S = make_sketch("gaussian", 6, 3, 0)
    with pytest.raises(InvalidArgumentError):
        apply_right(rng.standard_normal((2, 5)), S)
    with pytest.raises(InvalidArgumentError):
        apply_transpose(S, np.ones(5))


def test_materialize_guard(monkeypatch):
    import freesketch.sketching as sk
    monkeypatch.setattr(sk, "MATERIALIZE_LIMIT", 10)
    with pytest.raises(SizeGuardError):
        make_sketch("srdct", 8, 4, 0).materialize()
