"""Empirical checks that a sketch behaves freely with respect to a fixed matrix.

Two diagnostics:

* normalized traces of alternating products of centered polynomials in a
  matrix ``A`` and ``B = S S^T`` (these vanish asymptotically for free pairs);
* scatter points ``(w, mu / lam)`` from empirically matched ridge traces,
  which should fall on the S-transform curve of the sketch family.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError
from .sketching import SketchOperator, make_sketch
from .subordination import empirical_mu_from_spectra, s_transform, sketched_spectrum


@dataclass(frozen=True)
class PolynomialWord:
    """``poly_{r1}(A) poly_{s1}(B) poly_{r2}(A) poly_{s2}(B) ...``"""

    exponents_A: tuple[int, ...]
    exponents_B: tuple[int, ...]

    def __post_init__(self):
        a, b = tuple(self.exponents_A), tuple(self.exponents_B)
        object.__setattr__(self, "exponents_A", a)
        object.__setattr__(self, "exponents_B", b)
        if not a or not b:
            raise InvalidArgumentError("both exponent lists must be nonempty")
        if len(a) not in (len(b), len(b) + 1):
            raise InvalidArgumentError("exponents must alternate, starting with A")
        if min(a + b) < 1:
            raise InvalidArgumentError("exponents must be positive")

    def factors(self):
        """``('A', r), ('B', s), ...`` in product order."""
        out = []
        for i, r in enumerate(self.exponents_A):
            out.append(("A", r))
            if i < len(self.exponents_B):
                out.append(("B", self.exponents_B[i]))
        return out

    def __str__(self):
        return "".join(f"{m}{e}" for m, e in self.factors())


# the two words from the freeness study: (1,2,2,3) and (3,1,4,2)
WORDS = (PolynomialWord((1, 2), (2, 3)), PolynomialWord((3, 4), (1, 2)))


def centered_poly(A, r: int) -> np.ndarray:
    """``A^r - (1/p) tr[A^r] I``."""
    A = np.asarray(A, dtype=float)
    if r < 1:
        raise InvalidArgumentError("r must be a positive integer")
    Ar = np.linalg.matrix_power(A, r)
    return Ar - np.trace(Ar) / A.shape[0] * np.eye(A.shape[0])


def _centered_powers_B(Bmat: np.ndarray, exps) -> dict[int, np.ndarray]:
    p = Bmat.shape[0]
    out, cur = {}, Bmat
    for s in range(1, max(exps) + 1):
        if s > 1:
            cur = cur @ Bmat
        if s in exps:
            out[s] = cur - np.trace(cur) / p * np.eye(p)
    return out


def alternating_trace(A, S: SketchOperator, word: PolynomialWord) -> float:
    """``(1/p) tr`` of the alternating centered product in ``A`` and ``S S^T``.

    ``A`` may be a 1-D array (read as a diagonal). Non-diagonal matrices are
    rotated into their eigenbasis so the ``A`` factors stay diagonal.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim == 1:
        a, V = A, None
    else:
        if A.shape != (S.p, S.p):
            raise InvalidArgumentError(f"A has shape {A.shape}, sketch acts on p={S.p}")
        if np.count_nonzero(A - np.diag(np.diag(A))) == 0:
            a, V = np.diag(A).copy(), None
        else:
            a, V = np.linalg.eigh((A + A.T) / 2)
    p = a.size
    if p != S.p:
        raise InvalidArgumentError(f"A has size {p}, sketch acts on p={S.p}")
    M = S.materialize()
    if V is not None:
        M = V.T @ M
    Bmat = M @ M.T
    Bpow = _centered_powers_B(Bmat, set(word.exponents_B))
    # running product, kept as a diagonal vector until the first B factor
    diag, dense = np.ones(p), None
    factors = word.factors()
    for idx, (m, e) in enumerate(factors):
        if m == "A":
            ar = a**e
            d = ar - ar.mean()
            if dense is None:
                diag = diag * d
            else:
                dense = dense * d[None, :]
        else:
            P = Bpow[e]
            if dense is None:
                dense = diag[:, None] * P
            elif idx == len(factors) - 1:
                return float(np.sum(dense * P.T)) / p
            else:
                dense = dense @ P
    return float(np.trace(dense)) / p


def logistic_diagonal(p: int, a0: float, s0: float, t0: float, literal: bool = False) -> np.ndarray:
    """Diagonal test spectrum on the grid ``t_i = (i-1)/(p-1)``.

    The default is the logistic curve ``a0 / (1 + exp(-(t - t0)/s0))``, which is
    positive everywhere. ``literal=True`` gives ``a0 / (1 - exp(-(t - t0)/s0))``
    with grid points hitting ``t0`` shifted by ``1e-9``; that variant has a pole
    and negative entries below ``t0``.
    """
    t = np.linspace(0.0, 1.0, p) if p > 1 else np.zeros(1)
    if not literal:
        return a0 / (1 + np.exp(-(t - t0) / s0))
    t = np.where(t == t0, t + 1e-9, t)
    return a0 / (1 - np.exp(-(t - t0) / s0))


def subordination_scatter(A, S, lambdas, alpha: float | None = None, seed: int = 0,
                          covariance: bool = True):
    """``(trace_arg, mu/lam)`` for each ``lam``, with ``mu`` from trace matching.

    ``S`` is a :class:`SketchOperator` or a sketch kind; in the latter case a
    sketch with ``q = round(alpha * p)`` is drawn from ``seed``.
    """
    A = np.asarray(A, dtype=float)
    p = A.shape[0] if covariance else A.shape[1]
    if not isinstance(S, SketchOperator):
        if alpha is None:
            raise InvalidArgumentError("alpha is required when passing a sketch kind")
        S = make_sketch(S, p, max(1, int(round(alpha * p))), seed)
    spec, d = sketched_spectrum(A, S, covariance)
    out = []
    for lam in lambdas:
        mu = empirical_mu_from_spectra(spec, d, float(lam))
        out.append((spec.w(mu), mu / lam))
    return out


def curve_deviation(points, kind, alpha: float) -> np.ndarray:
    """Vertical gaps ``mu/lam - S(trace_arg)`` to the theoretical curve."""
    return np.array([r - s_transform(kind, alpha, w) for w, r in points])


def write_scatter_csv(rows, path) -> None:
    """Rows are dicts with keys family, p, q, lambda, trace_arg, mu_over_lambda."""
    _write_dicts(rows, ["family", "p", "q", "lambda", "trace_arg", "mu_over_lambda"], path)


def write_trace_csv(rows, path) -> None:
    """Rows are dicts with keys word, p, value (extra keys allowed)."""
    keys = list(dict.fromkeys(["word", "p", "value"] + [k for r in rows for k in r]))
    _write_dicts(rows, keys, path)


def _write_dicts(rows, keys, path):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        w.writerows(rows)
