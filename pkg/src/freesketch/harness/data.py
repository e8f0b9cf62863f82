"""Synthetic data generators and CSV / LibSVM ingestion."""
from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from ..errors import InvalidArgumentError
from ..freeness import logistic_diagonal
from ..sketching import derive_seed, make_rng


class SigmaFamily(str, enum.Enum):
    IDENTITY = "identity"
    DECAY = "decay"
    LOGISTIC = "logistic"


class Response(str, enum.Enum):
    LINEAR = "linear"
    SOFT_THRESHOLD = "soft_threshold"
    BINARY_SIGN = "binary_sign"


class BetaKind(str, enum.Enum):
    DENSE = "dense"
    SPARSE = "sparse"


def soft_threshold(u):
    u = np.asarray(u, dtype=float)
    return np.sign(u) * np.maximum(np.abs(u) - 1.0, 0.0)


@dataclass(frozen=True)
class SyntheticSpec:
    n: int
    p: int
    sigma_family: SigmaFamily = SigmaFamily.IDENTITY
    response: Response = Response.LINEAR
    sigma_xi: float = 1.0
    beta: BetaKind = BetaKind.DENSE
    support: int | None = None
    logistic: tuple[float, float, float] = (1.0, 0.1, 0.5)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "sigma_family", SigmaFamily(self.sigma_family))
        object.__setattr__(self, "response", Response(self.response))
        object.__setattr__(self, "beta", BetaKind(self.beta))
        object.__setattr__(self, "logistic", tuple(self.logistic))
        if self.n < 1 or self.p < 1:
            raise InvalidArgumentError("n and p must be positive")
        if self.sigma_xi < 0:
            raise InvalidArgumentError("noise level must be nonnegative")
        if self.beta is BetaKind.SPARSE and not (self.support and 1 <= self.support <= self.p):
            raise InvalidArgumentError("sparse coefficients need 1 <= support <= p")

    def covariance_diagonal(self) -> np.ndarray:
        p = self.p
        t = np.linspace(0.0, 1.0, p) if p > 1 else np.zeros(1)
        if self.sigma_family is SigmaFamily.IDENTITY:
            return np.ones(p)
        if self.sigma_family is SigmaFamily.DECAY:
            return 2.0 / (1.0 + 30.0 * t)
        return logistic_diagonal(p, *self.logistic)


@dataclass
class Truth:
    """Population quantities behind a synthetic draw."""

    beta: np.ndarray
    sigma_diag: np.ndarray
    sigma_xi: float
    response: Response
    seed: int = field(default=0, repr=False)

    def responses(self, X, rng) -> np.ndarray:
        u = X @ self.beta
        if self.response is Response.SOFT_THRESHOLD:
            return soft_threshold(u) + self.sigma_xi * rng.standard_normal(u.size)
        noisy = u + self.sigma_xi * rng.standard_normal(u.size)
        if self.response is Response.BINARY_SIGN:
            return np.where(noisy >= 0, 1.0, -1.0)
        return noisy

    def sample(self, n0: int, stream: int = 0):
        """Fresh ``(X0, y0)`` from the same distribution; ``stream`` picks the draw."""
        rng = make_rng(derive_seed(self.seed, 2, stream))
        X0 = rng.standard_normal((n0, self.sigma_diag.size)) * np.sqrt(self.sigma_diag)
        return X0, self.responses(X0, rng)

    def linear_risk(self, beta) -> float:
        """``(b - beta)^T Sigma (b - beta) + sigma^2``: exact for linear responses."""
        if self.response is not Response.LINEAR:
            raise InvalidArgumentError("closed-form risk needs a linear response")
        d = np.asarray(beta) - self.beta
        return float(np.sum(self.sigma_diag * d**2) + self.sigma_xi**2)


def generate_synthetic(spec: SyntheticSpec):
    """``(X, y, truth)`` with Gaussian rows ``N(0, Sigma)``; deterministic in ``spec.seed``."""
    a = spec.covariance_diagonal()
    brng = make_rng(derive_seed(spec.seed, 0))
    beta = np.zeros(spec.p)
    if spec.beta is BetaKind.DENSE:
        beta = brng.standard_normal(spec.p) / np.sqrt(spec.p)
    else:
        s = spec.support
        beta[:s] = brng.standard_normal(s) / np.sqrt(s)
    truth = Truth(beta, a, spec.sigma_xi, spec.response, spec.seed)
    rng = make_rng(derive_seed(spec.seed, 1))
    X = rng.standard_normal((spec.n, spec.p)) * np.sqrt(a)
    return X, truth.responses(X, rng), truth


@dataclass
class Dataset:
    X: object
    y: np.ndarray
    x_mean: np.ndarray | None = None
    y_mean: float = 0.0

    def __iter__(self):
        yield self.X
        yield self.y

    def transform(self, X0):
        """Center new rows with the training means."""
        if self.x_mean is None:
            return X0
        X0 = X0.toarray() if sp.issparse(X0) else np.asarray(X0, dtype=float)
        return X0 - self.x_mean

    def restore(self, predictions) -> np.ndarray:
        """Add the training response mean back to centered-space predictions."""
        return np.asarray(predictions) + self.y_mean


def _number(tok: str, line: int) -> float:
    try:
        return float(tok.strip().replace("−", "-"))
    except ValueError:
        raise InvalidArgumentError(f"line {line}: cannot parse {tok!r} as a number") from None


def _read_csv(path, target: int):
    rows, header_seen = [], False
    with open(path, newline="") as fh:
        for i, rec in enumerate(csv.reader(fh), start=1):
            if not rec or all(not c.strip() for c in rec):
                continue
            if i == 1 and not header_seen:
                try:
                    float(rec[0].strip().replace("−", "-"))
                except ValueError:
                    header_seen = True
                    continue
            vals = [_number(c, i) for c in rec]
            if rows and len(vals) != len(rows[0][1]):
                raise InvalidArgumentError(
                    f"line {i}: expected {len(rows[0][1])} fields, found {len(vals)}")
            rows.append((i, vals))
    if not rows:
        raise InvalidArgumentError(f"{path}: no data rows")
    M = np.array([v for _, v in rows])
    if M.shape[1] < 2:
        raise InvalidArgumentError(f"{path}: need at least one feature and a response")
    y = M[:, target]
    X = np.delete(M, target % M.shape[1], axis=1)
    return X, y


def _read_libsvm(path, n_features: int | None):
    labels, indptr, indices, data = [], [0], [], []
    with open(path) as fh:
        for i, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            toks = line.split()
            labels.append(_number(toks[0], i))
            for tok in toks[1:]:
                if ":" not in tok:
                    raise InvalidArgumentError(f"line {i}: expected index:value, got {tok!r}")
                k, v = tok.split(":", 1)
                try:
                    col = int(k)
                except ValueError:
                    raise InvalidArgumentError(f"line {i}: bad feature index {k!r}") from None
                if col < 0:
                    raise InvalidArgumentError(f"line {i}: negative feature index {col}")
                indices.append(col)
                data.append(_number(v, i))
            indptr.append(len(indices))
    if not labels:
        raise InvalidArgumentError(f"{path}: no data rows")
    width = (max(indices) + 1) if indices else 0
    if n_features is not None:
        if width > n_features:
            raise InvalidArgumentError(f"feature index {width - 1} exceeds n_features={n_features}")
        width = n_features
    X = sp.csr_matrix((data, indices, indptr), shape=(len(labels), width))
    return X, np.array(labels)


def load_dataset(path, fmt: str = "csv", center: bool = False, target: int = -1,
                 n_features: int | None = None) -> Dataset:
    """Read a design matrix and response.

    CSV: one row per observation, response in column ``target`` (default last),
    optional header. LibSVM: ``label index:value ...`` with feature ``index``
    stored in column ``index``. ``center`` subtracts column and response means
    (sparse input becomes dense).
    """
    fmt = fmt.lower()
    if fmt == "csv":
        X, y = _read_csv(path, target)
    elif fmt in ("libsvm", "svmlight"):
        X, y = _read_libsvm(path, n_features)
    else:
        raise InvalidArgumentError(f"unknown format {fmt!r}")
    if not center:
        return Dataset(X, y)
    Xd = X.toarray() if sp.issparse(X) else X
    xm, ym = Xd.mean(axis=0), float(y.mean())
    return Dataset(Xd - xm, y - ym, xm, ym)


def write_csv_dataset(path, X, y) -> None:
    X = X.toarray() if sp.issparse(X) else np.asarray(X)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{j}" for j in range(X.shape[1])] + ["y"])
        for row, t in zip(X, y):
            w.writerow([repr(float(v)) for v in row] + [repr(float(t))])
