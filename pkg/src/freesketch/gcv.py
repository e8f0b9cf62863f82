"""GCV, LOOCV and k-fold risk estimates for sketched ridge ensembles."""
from __future__ import annotations

import csv
import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linear_sum_assignment, linprog
from scipy.spatial.distance import cdist

from .errors import (
    DegenerateDenominatorError,
    DegenerateLeverageError,
    InvalidArgumentError,
    SizeGuardError,
)
from .estimator import EnsembleModel, FitSpec, ensemble_diagonals, predict, smoother_trace
from .sketching import derive_seed, make_rng

W2_SIZE_LIMIT = 4_000_000
_DEGENERATE_TOL = 1e-12


@dataclass(frozen=True)
class ErrorFunctional:
    name: str
    evaluate: Callable[[np.ndarray, np.ndarray], np.ndarray] = field(compare=False)

    def __call__(self, y, z):
        return self.evaluate(np.asarray(y, dtype=float), np.asarray(z, dtype=float))


SQUARED = ErrorFunctional("squared", lambda y, z: (y - z) ** 2)
ABSOLUTE = ErrorFunctional("absolute", lambda y, z: np.abs(y - z))
SIGN_MISMATCH = ErrorFunctional("sign_mismatch", lambda y, z: (y != np.sign(z)).astype(float))
ZERO = ErrorFunctional("zero", lambda y, z: np.zeros(np.broadcast(y, z).shape))


def huber(delta: float = 1.0) -> ErrorFunctional:
    if delta <= 0:
        raise InvalidArgumentError("Huber delta must be positive")

    def f(y, z):
        r = np.abs(y - z)
        return np.where(r <= delta, 0.5 * r**2, delta * (r - 0.5 * delta))

    return ErrorFunctional(f"huber({delta:g})", f)


def functional_by_name(name: str) -> ErrorFunctional:
    key = name.strip().lower()
    if key.startswith("huber"):
        inner = key[5:].strip("()") or "1"
        return huber(float(inner))
    table = {f.name: f for f in (SQUARED, ABSOLUTE, SIGN_MISMATCH, ZERO)}
    table["sign"] = SIGN_MISMATCH
    if key not in table:
        raise InvalidArgumentError(f"unknown functional {name!r}")
    return table[key]


class Estimator(str, enum.Enum):
    GCV = "GCV"
    LOOCV = "LOOCV"
    KFOLD = "KFold"
    TEST = "TestOracle"


@dataclass
class RiskReport:
    estimator: Estimator
    value: float
    functional: str
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.estimator = Estimator(self.estimator)
        if not np.isfinite(self.value):
            raise InvalidArgumentError(f"non-finite risk value {self.value}")

    def to_dict(self) -> dict:
        return {"estimator": self.estimator.value, "value": float(self.value),
                "functional": self.functional, **self.meta}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), default=_jsonable)


def _jsonable(o):
    if isinstance(o, enum.Enum):
        return o.value
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def write_reports_csv(reports, path) -> None:
    rows = [r.to_dict() for r in reports]
    keys = list(dict.fromkeys(k for row in rows for k in row))
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        w.writerows(rows)


@dataclass
class GcvDistribution:
    pairs: np.ndarray  # n x 2 columns (y_i, z_i)
    trace_used: float

    @property
    def degenerate(self) -> bool:
        return not self.trace_used < 1

    @property
    def residuals(self) -> np.ndarray:
        return self.pairs[:, 0] - self.pairs[:, 1]

    def to_csv(self, path) -> None:
        np.savetxt(Path(path), self.pairs, delimiter=",", header="y,z", comments="")


def _meta(model: EnsembleModel, **extra) -> dict:
    kind = model.members[0].sketch.kind.value if model.members[0].sketch else "none"
    q = model.members[0].sketch.q if model.members[0].sketch else model.p
    return {"lambda": model.lam, "K": model.K, "q": q, "kind": kind,
            "seed": model.members[0].sketch.seed if model.members[0].sketch else None,
            "mode": model.mode.value, "n": model.n_train, "p": model.p, **extra}


def _denominator(model: EnsembleModel, trace_method) -> tuple[float, float]:
    tr = smoother_trace(model, method=trace_method)
    if abs(1 - tr) <= _DEGENERATE_TOL:
        raise DegenerateDenominatorError(f"(1/n)tr[L] = {tr!r} makes the GCV denominator vanish")
    return tr, 1 - tr


def gcv_squared_risk(model: EnsembleModel, X, y, trace_method="exact") -> RiskReport:
    y = np.asarray(y, dtype=float)
    _, den = _denominator(model, trace_method)
    resid = y - model.train_predictions(X)
    val = float(np.mean(resid**2) / den**2)
    return RiskReport(Estimator.GCV, val, SQUARED.name, _meta(model))


def gcv_corrected_pairs(model: EnsembleModel, X, y, trace_method="exact") -> GcvDistribution:
    y = np.asarray(y, dtype=float)
    tr, den = _denominator(model, trace_method)
    z = (model.train_predictions(X) - tr * y) / den
    return GcvDistribution(np.column_stack([y, z]), tr)


def gcv_functional(model: EnsembleModel, X, y, t: ErrorFunctional,
                   trace_method="exact") -> RiskReport:
    dist = gcv_corrected_pairs(model, X, y, trace_method)
    val = float(np.mean(t(dist.pairs[:, 0], dist.pairs[:, 1])))
    return RiskReport(Estimator.GCV, val, t.name, _meta(model))


def loo_predictions(model: EnsembleModel, X, y) -> np.ndarray:
    """Leave-one-out ensemble predictions via the per-member shortcut."""
    y = np.asarray(y, dtype=float)
    P = model.member_train_predictions(X)
    D = ensemble_diagonals(model, X)
    if np.any(np.abs(1 - D) <= _DEGENERATE_TOL):
        raise DegenerateLeverageError("a smoother diagonal equals one")
    return y - np.mean((y - P) / (1 - D), axis=0)


def loocv_functional(model: EnsembleModel, X, y, t: ErrorFunctional = SQUARED) -> RiskReport:
    y = np.asarray(y, dtype=float)
    val = float(np.mean(t(y, loo_predictions(model, X, y))))
    return RiskReport(Estimator.LOOCV, val, t.name, _meta(model))


def prediction_interval(dist: GcvDistribution, tau_l: float, tau_u: float) -> tuple[float, float]:
    """Offsets ``(Q(tau_l), Q(tau_u))`` of the GCV residual quantile function."""
    if not (0 <= tau_l < tau_u <= 1):
        raise InvalidArgumentError(f"need 0 <= tau_l < tau_u <= 1, got ({tau_l}, {tau_u})")
    r = np.sort(dist.residuals)
    if r.size == 0:
        raise InvalidArgumentError("empty distribution")
    return _inf_quantile(r, tau_l), _inf_quantile(r, tau_u)


def _inf_quantile(r_sorted: np.ndarray, tau: float) -> float:
    # inf{z : F(z) >= tau} with F(r_(k)) = k/n
    n = r_sorted.size
    k = max(int(np.ceil(tau * n - 1e-12)), 1)
    return float(r_sorted[min(k, n) - 1])


def kfold_cv(X, y, k: int, spec: FitSpec, t: ErrorFunctional = SQUARED,
             seed: int | None = None) -> RiskReport:
    """k-fold CV with fresh sketches for every fold."""
    y = np.asarray(y, dtype=float)
    n = X.shape[0]
    if k < 2 or n < k:
        raise InvalidArgumentError(f"need 2 <= k <= n, got k={k}, n={n}")
    base = spec.seed if seed is None else seed
    perm = make_rng(derive_seed(base, 0xF01D)).permutation(n)
    losses = []
    for j, test in enumerate(np.array_split(perm, k)):
        train = np.setdiff1d(perm, test, assume_unique=True)
        model = spec.fit(X[train], y[train], seed=derive_seed(base, j))
        losses.append(np.mean(t(y[test], predict(model, X[test]))))
    meta = {"lambda": spec.lam, "K": spec.K, "q": spec.q, "kind": spec.kind.value,
            "seed": base, "mode": spec.mode.value, "n": n, "p": X.shape[1], "folds": k}
    return RiskReport(Estimator.KFOLD, float(np.mean(losses)), t.name, meta)


def test_functional(model: EnsembleModel, X_test, y_test, t: ErrorFunctional = SQUARED) -> RiskReport:
    y_test = np.asarray(y_test, dtype=float)
    if y_test.size == 0:
        raise InvalidArgumentError("empty test set")
    if X_test.shape[0] != y_test.size:
        raise InvalidArgumentError("test design and response lengths differ")
    val = float(np.mean(t(y_test, predict(model, X_test))))
    return RiskReport(Estimator.TEST, val, t.name, _meta(model, n_test=y_test.size))


test_functional.__test__ = False  # keep pytest from collecting it


def wasserstein2_joint(A, B) -> float:
    """Exact W2 distance between two empirical measures on R^d."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if A.shape[0] == 0 or B.shape[0] == 0:
        raise InvalidArgumentError("empirical measures need at least one atom")
    if A.shape[1] != B.shape[1]:
        raise InvalidArgumentError("atoms live in different dimensions")
    na, nb = A.shape[0], B.shape[0]
    if na * nb > W2_SIZE_LIMIT:
        raise SizeGuardError(f"{na}x{nb} transport problem exceeds {W2_SIZE_LIMIT} cells")
    C = cdist(A, B, "sqeuclidean")
    if na == nb:
        rows, cols = linear_sum_assignment(C)
        return float(np.sqrt(C[rows, cols].mean()))
    # transport LP: plan P >= 0 with row sums 1/na and column sums 1/nb
    eq_rows = sp.kron(sp.identity(na), np.ones((1, nb)))
    eq_cols = sp.kron(np.ones((1, na)), sp.identity(nb))
    A_eq = sp.vstack([eq_rows, eq_cols]).tocsr()
    b_eq = np.concatenate([np.full(na, 1 / na), np.full(nb, 1 / nb)])
    res = linprog(C.ravel(), A_eq=A_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    if not res.success:
        raise InvalidArgumentError(f"transport LP failed: {res.message}")
    return float(np.sqrt(max(res.fun, 0.0)))
