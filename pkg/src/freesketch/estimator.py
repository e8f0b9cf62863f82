"""Sketched ridge ensembles (feature and observation sketching) and plain ridge.

Every member reduces to a ridge problem

    minimize_b  (1/n) ||c - A b||^2 + lam ||b||^2

where ``A = X S`` (feature sketch), ``A = T.T X`` (observation sketch, with
the ``1/n`` normalization kept at the unsketched sample size) or ``A = X``.
:class:`RidgeSystem` caches the Gram matrix of the smaller side and its
eigendecomposition, so a sweep over ``lam`` costs one factorization per
sketch. The eigendecomposition also covers ``lam <= 0``: negative levels are
accepted down to ``-lambda_min^+`` and ``lam = 0`` resolves to the min-norm
solution.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, cg, minres

from .errors import (
    InvalidArgumentError,
    IterationLimitError,
    MemberFitError,
    RegularizationTooNegativeError,
)
from .sketching import SketchKind, SketchOperator, derive_seed, make_rng, make_sketch


class Solver(str, enum.Enum):
    DIRECT = "direct"
    CG = "cg"


class Mode(str, enum.Enum):
    FEATURE = "feature"
    OBSERVATION = "observation"
    UNSKETCHED = "unsketched"


@dataclass(frozen=True)
class FitConfig:
    lam: float = 1.0
    solver: Solver = Solver.DIRECT
    cg_tol: float = 1e-10
    cg_max_iter: int = 2000

    def __post_init__(self):
        object.__setattr__(self, "solver", Solver(self.solver))
        if not (0 < self.cg_tol <= 1e-2):
            raise InvalidArgumentError(f"cg_tol must lie in (0, 1e-2], got {self.cg_tol}")
        if self.cg_max_iter < 1:
            raise InvalidArgumentError("cg_max_iter must be at least 1")

    def with_lam(self, lam: float) -> "FitConfig":
        return FitConfig(lam, self.solver, self.cg_tol, self.cg_max_iter)


@dataclass(frozen=True)
class Hutchinson:
    """Rademacher-probe trace estimation settings."""

    seed: int = 0
    probes: int = 1


def _dense(X):
    return X.toarray() if sp.issparse(X) else np.asarray(X, dtype=float)


class RidgeSystem:
    """Ridge problem ``(A.T A / n + lam I) b = A.T c / n`` with cached spectra."""

    def __init__(self, A, c, n: int):
        self.A = _dense(A)
        self.c = np.asarray(c, dtype=float)
        self.n = int(n)
        r, k = self.A.shape
        if self.c.shape != (r,):
            raise InvalidArgumentError(f"response length {self.c.shape} does not match {r} rows")
        self.rows, self.cols = r, k
        # dual (rows x rows) system when the primal one is larger
        self.dual = k > r

    @cached_property
    def rhs(self) -> np.ndarray:
        return self.A.T @ self.c / self.n

    @cached_property
    def _eig(self):
        A = self.A
        G = (A @ A.T if self.dual else A.T @ A) / self.n
        d, V = np.linalg.eigh((G + G.T) / 2)
        tol = max(G.shape) * np.finfo(float).eps * max(float(d.max(initial=0.0)), 1.0)
        d = np.where(d > tol, d, 0.0)
        return d, V

    @property
    def eigenvalues(self) -> np.ndarray:
        """Nonzero spectrum shared by ``A.T A / n`` and ``A A.T / n`` (zeros kept)."""
        return self._eig[0]

    @cached_property
    def min_positive_eig(self) -> float:
        d = self.eigenvalues
        pos = d[d > 0]
        return float(pos.min()) if pos.size else np.inf

    def check_lam(self, lam: float) -> None:
        if lam <= 0 and lam <= -self.min_positive_eig:
            raise RegularizationTooNegativeError(
                f"lam={lam:g} is at or below -lambda_min^+ = {-self.min_positive_eig:g}",
                lam=lam, min_positive_eig=self.min_positive_eig)

    def _inv_weights(self, lam: float) -> np.ndarray:
        d = self.eigenvalues
        self.check_lam(lam)
        with np.errstate(divide="ignore"):
            w = 1.0 / (d + lam)
        if lam == 0:
            w[d == 0] = 0.0
        return w

    def coef(self, lam: float, cfg: FitConfig | None = None) -> np.ndarray:
        if np.isinf(lam):
            return np.zeros(self.cols)
        if cfg is not None and cfg.solver is Solver.CG:
            return self._coef_iterative(lam, cfg)
        d, V = self._eig
        w = self._inv_weights(lam)
        if self.dual:
            alpha = V @ (w * (V.T @ self.c))
            return self.A.T @ alpha / self.n
        return V @ (w * (V.T @ self.rhs))

    def _coef_iterative(self, lam: float, cfg: FitConfig) -> np.ndarray:
        A, n = self.A, self.n
        if self.dual:
            dim, rhs = self.rows, self.c

            def mv(v):
                return A @ (A.T @ v) / n + lam * v
        else:
            dim, rhs = self.cols, self.rhs

            def mv(v):
                return A.T @ (A @ v) / n + lam * v
        op = LinearOperator((dim, dim), matvec=mv, dtype=float)
        if lam > 0:
            method, rtol = cg, cfg.cg_tol
        else:
            # minres stops on ||r|| <= rtol ||M|| ||x||, looser than a bound relative to ||rhs||
            method, rtol = minres, cfg.cg_tol * 1e-3
        x, _ = method(op, rhs, rtol=rtol, maxiter=cfg.cg_max_iter)
        scale = np.linalg.norm(rhs)
        res = np.linalg.norm(mv(x) - rhs) / scale if scale > 0 else 0.0
        if res > cfg.cg_tol * 10:
            raise IterationLimitError(
                f"{method.__name__} stopped at relative residual {res:.3e} "
                f"after {cfg.cg_max_iter} iterations", residual=res)
        return A.T @ x / n if self.dual else x

    def solve(self, B: np.ndarray, lam: float) -> np.ndarray:
        """``(A.T A / n + lam I)^{-1} B`` in the primal (column) space."""
        if self.dual:
            # push-through: (G + lam)^{-1} = (I - A.T (AA.T/n + lam)^{-1} A / n) / lam
            if lam == 0:
                raise InvalidArgumentError("primal resolvent at lam=0 is singular in the dual regime")
            d, V = self._eig
            w = self._inv_weights(lam)
            AB = self.A @ B
            return (B - self.A.T @ (V @ (w[:, None] * (V.T @ AB)) if B.ndim > 1
                                   else V @ (w * (V.T @ AB))) / self.n) / lam
        d, V = self._eig
        w = self._inv_weights(lam)
        if B.ndim == 1:
            return V @ (w * (V.T @ B))
        return V @ (w[:, None] * (V.T @ B))

    def trace(self, lam: float) -> float:
        """``tr[(G + lam)^{-1} G]`` for ``G = A.T A / n`` (equals ``tr`` of the smoother)."""
        if np.isinf(lam):
            return 0.0
        d = self.eigenvalues
        w = self._inv_weights(lam)
        return float(np.sum(d * w))

    def trace_hutchinson(self, lam: float, rng: np.random.Generator, probes: int) -> float:
        if np.isinf(lam):
            return 0.0
        dim = self.rows if self.dual else self.cols
        Z = rng.integers(0, 2, size=(dim, probes)) * 2.0 - 1.0
        d, V = self._eig
        w = self._inv_weights(lam)
        # both sides share the nonzero spectrum, so probe whichever is smaller
        GZ = V @ ((d * w)[:, None] * (V.T @ Z))
        return float(np.mean(np.sum(Z * GZ, axis=0)))

    def hat_diagonal(self, lam: float) -> np.ndarray:
        """Diagonal of ``A (A.T A / n + lam I)^{-1} A.T / n``."""
        if np.isinf(lam):
            return np.zeros(self.rows)
        d, V = self._eig
        w = self._inv_weights(lam)
        if self.dual:
            return np.sum(V**2 * (d * w), axis=1)
        W = self.A @ V
        return np.sum(W**2 * w, axis=1) / self.n


@dataclass
class Member:
    sketch: SketchOperator | None
    coef: np.ndarray
    system: RidgeSystem = field(repr=False)


@dataclass
class EnsembleModel:
    mode: Mode
    lam: float
    members: list[Member]
    p: int
    n_train: int
    _X: object = field(default=None, repr=False)

    def __post_init__(self):
        if not self.members:
            raise InvalidArgumentError("an ensemble needs at least one member")

    @property
    def K(self) -> int:
        return len(self.members)

    @cached_property
    def aggregated_beta(self) -> np.ndarray:
        if self.mode is Mode.FEATURE:
            return np.mean([m.sketch.apply(m.coef) for m in self.members], axis=0)
        return np.mean([m.coef for m in self.members], axis=0)

    def member_beta(self, k: int) -> np.ndarray:
        m = self.members[k]
        return m.sketch.apply(m.coef) if self.mode is Mode.FEATURE else m.coef

    def member_train_predictions(self, X=None) -> np.ndarray:
        """``K x n`` array of in-sample predictions, reusing cached sketched data."""
        if X is not None and X is not self._X:
            return np.array([_dense(X) @ self.member_beta(k) for k in range(self.K)])
        if self.mode is Mode.FEATURE:
            return np.array([m.system.A @ m.coef for m in self.members])
        Xd = self.members[0].system.A if self.mode is Mode.UNSKETCHED else _dense(self._X)
        return np.array([Xd @ m.coef for m in self.members])

    def train_predictions(self, X=None) -> np.ndarray:
        return self.member_train_predictions(X).mean(axis=0)

    def summary(self) -> dict:
        return {
            "mode": self.mode.value,
            "lambda": self.lam,
            "K": self.K,
            "p": self.p,
            "n_train": self.n_train,
            "sketches": [m.sketch.to_dict() if m.sketch else None for m in self.members],
            "coef_norms": [float(np.linalg.norm(m.coef)) for m in self.members],
        }


class SketchedEnsemble:
    """Per-member ridge systems shared across a sweep of ridge levels."""

    def __init__(self, mode: Mode, X, y, sketches: list[SketchOperator | None]):
        self.mode = Mode(mode)
        self.X = X
        self.y = np.asarray(y, dtype=float)
        n, p = X.shape
        self.n, self.p = n, p
        self.sketches = sketches
        self.systems = []
        for k, S in enumerate(sketches):
            try:
                self.systems.append(_member_system(self.mode, X, self.y, S))
            except InvalidArgumentError as exc:
                raise MemberFitError(f"member {k}: {exc}", k) from exc

    def model(self, lam: float, cfg: FitConfig | None = None, members=None) -> EnsembleModel:
        idx = range(len(self.systems)) if members is None else members
        out = []
        for k in idx:
            sys_ = self.systems[k]
            try:
                coef = sys_.coef(lam, cfg)
            except (RegularizationTooNegativeError, IterationLimitError) as exc:
                raise MemberFitError(f"member {k}: {exc}", k) from exc
            out.append(Member(self.sketches[k], coef, sys_))
        return EnsembleModel(self.mode, lam, out, self.p, self.n, self.X)

    def lambda_min(self) -> float:
        """Estimate of ``lambda_0``: minus the smallest positive sketched Gram eigenvalue."""
        return -min(s.min_positive_eig for s in self.systems) * (1 - 1e-9)


def _member_system(mode: Mode, X, y, S: SketchOperator | None) -> RidgeSystem:
    n, p = X.shape
    if mode is Mode.UNSKETCHED or S is None:
        return RidgeSystem(X, y, n)
    if mode is Mode.FEATURE:
        if S.p != p:
            raise InvalidArgumentError(f"sketch has p={S.p}, data has {p} features")
        return RidgeSystem(S.apply_right(X), y, n)
    if S.p != n:
        raise InvalidArgumentError(f"observation sketch has p={S.p}, data has {n} rows")
    return RidgeSystem(S.apply_transpose(_dense(X)), S.apply_transpose(y), n)


def fit_sketched_member(X, y, S: SketchOperator, cfg: FitConfig) -> np.ndarray:
    """Coefficients in sketch space (length ``q``) for one feature sketch."""
    return _member_system(Mode.FEATURE, X, y, S).coef(cfg.lam, cfg)


def fit_observation_sketched_member(X, y, T: SketchOperator, cfg: FitConfig) -> np.ndarray:
    """Feature-space coefficients (length ``p``) for one observation sketch ``T`` (n x m)."""
    return _member_system(Mode.OBSERVATION, X, y, T).coef(cfg.lam, cfg)


def fit_ridge(X, y, mu: float, cfg: FitConfig | None = None) -> np.ndarray:
    """Unsketched ridge at level ``mu``; dual system when ``p > n``."""
    return RidgeSystem(X, y, X.shape[0]).coef(mu, cfg)


def make_member_sketches(mode, kind, n: int, p: int, q: int, K: int, seed: int):
    mode = Mode(mode)
    if mode is Mode.UNSKETCHED:
        return [None]
    dim = p if mode is Mode.FEATURE else n
    return [make_sketch(kind, dim, q, derive_seed(seed, k)) for k in range(K)]


def prepare_ensemble(X, y, kind, q: int, K: int, seed: int, mode=Mode.FEATURE) -> SketchedEnsemble:
    n, p = X.shape
    return SketchedEnsemble(mode, X, y, make_member_sketches(mode, kind, n, p, q, K, seed))


def fit_ensemble(X, y, kind, q: int, K: int, seed: int, cfg: FitConfig,
                 mode=Mode.FEATURE) -> EnsembleModel:
    """Average of ``K`` independently sketched ridge fits at ``cfg.lam``."""
    if K < 1:
        raise InvalidArgumentError("K must be at least 1")
    return prepare_ensemble(X, y, kind, q, K, seed, mode).model(cfg.lam, cfg)


def predict(model: EnsembleModel, X0) -> np.ndarray:
    if X0.ndim != 2 or X0.shape[1] != model.p:
        raise InvalidArgumentError(f"expected {model.p} columns, got shape {X0.shape}")
    if model.mode is Mode.FEATURE:
        return np.mean([m.sketch.apply_right(X0) @ m.coef for m in model.members], axis=0)
    X0 = _dense(X0)
    return np.mean([X0 @ m.coef for m in model.members], axis=0)


def smoother_trace(model: EnsembleModel, X=None, method="exact") -> float:
    """Normalized trace ``tr[L_ens] / n`` of the ensemble smoother."""
    n = model.n_train
    if method == "exact":
        return float(np.mean([m.system.trace(model.lam) for m in model.members])) / n
    if isinstance(method, Hutchinson):
        rng = make_rng(method.seed)
        vals = [m.system.trace_hutchinson(model.lam, rng, method.probes) for m in model.members]
        return float(np.mean(vals)) / n
    raise InvalidArgumentError(f"unknown trace method {method!r}")


def smoother_diag(member: Member, X, lam: float, mode=Mode.FEATURE) -> np.ndarray:
    """Diagonal of the member's smoothing matrix on its training data."""
    mode = Mode(mode)
    sys_ = member.system
    if mode is not Mode.OBSERVATION:
        return sys_.hat_diagonal(lam)
    # observation smoother (1/n) X M^{-1} X.T T T.T is not symmetric
    T = member.sketch
    Xd = _dense(X)
    B = sys_.solve(sys_.A.T, lam)  # p x m
    Tm = T.materialize()  # n x m
    return np.sum((Xd @ B) * Tm, axis=1) / sys_.n


def ensemble_diagonals(model: EnsembleModel, X=None) -> np.ndarray:
    """``K x n`` array of per-member smoother diagonals."""
    return np.array([smoother_diag(m, X if X is not None else model._X, model.lam, model.mode)
                     for m in model.members])


@dataclass(frozen=True)
class FitSpec:
    """Everything needed to refit an ensemble on new data."""

    kind: SketchKind = SketchKind.GAUSSIAN
    q: int = 1
    K: int = 1
    lam: float = 1.0
    mode: Mode = Mode.FEATURE
    seed: int = 0
    solver: Solver = Solver.DIRECT

    def __post_init__(self):
        object.__setattr__(self, "kind", SketchKind.parse(self.kind))
        object.__setattr__(self, "mode", Mode(self.mode))
        object.__setattr__(self, "solver", Solver(self.solver))

    def fit(self, X, y, seed: int | None = None) -> EnsembleModel:
        cfg = FitConfig(self.lam, self.solver)
        s = self.seed if seed is None else seed
        return fit_ensemble(X, y, self.kind, self.q, self.K, s, cfg, self.mode)
