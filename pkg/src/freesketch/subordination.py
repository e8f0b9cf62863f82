"""S-transforms, implicit regularization and inflation factors for sketched ridge.

Sketching at ridge level ``lam`` behaves like unsketched ridge at an implicit
level ``mu`` fixed by

    mu = lam * S(w(mu)),   w(mu) = -(1/p) tr[Sigma_hat (Sigma_hat + mu I)^{-1}],

with ``S`` the S-transform of ``S S^T``. Rather than iterating the fixed
point, solvers work with its explicit inverse ``lam(mu) = mu / S(w(mu))``,
which is increasing on ``[mu*, inf)`` where ``mu* = argmin lam``. The minimum
value is ``lambda_0``.

Observation sketching uses the same machinery on the ``n x n`` spectrum of
``X X^T / n`` with ``eta = m / n`` in place of ``alpha``.
"""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass

import numpy as np
from scipy.optimize import brentq

from .errors import (
    InvalidArgumentError,
    RecipeStepError,
    SubordinationDomainError,
)
from .estimator import Mode, SketchedEnsemble, _dense, fit_ridge
from .sketching import SketchKind, SketchOperator


# -- S-transforms ---------------------------------------------------------

def _family(kind) -> str:
    kind = SketchKind.parse(kind)
    if kind is SketchKind.IDENTITY:
        return "identity"
    if kind in (SketchKind.ORTHOGONAL, SketchKind.SRDCT):
        return "orthogonal"
    return "iid"  # Gaussian and CountSketch


def _check_alpha(alpha: float) -> None:
    if not (0 < alpha <= 1):
        raise InvalidArgumentError(f"alpha must lie in (0, 1], got {alpha}")


def s_transform(kind, alpha: float, w: float) -> float:
    fam = _family(kind)
    if fam == "identity":
        return 1.0
    _check_alpha(alpha)
    if alpha + w == 0:
        raise SubordinationDomainError(f"w={w} sits on the pole at -alpha")
    if fam == "iid":
        return alpha / (alpha + w)
    return alpha * (1 + w) / (alpha + w)


def s_transform_derivative(kind, alpha: float, w: float) -> float:
    fam = _family(kind)
    if fam == "identity":
        return 0.0
    _check_alpha(alpha)
    if alpha + w == 0:
        raise SubordinationDomainError(f"w={w} sits on the pole at -alpha")
    if fam == "iid":
        return -alpha / (alpha + w) ** 2
    return alpha * (alpha - 1) / (alpha + w) ** 2


# -- spectra --------------------------------------------------------------

class Spectrum:
    """Eigenvalues of a PSD matrix (zeros included) with normalized trace helpers."""

    def __init__(self, eigs):
        e = np.asarray(eigs, dtype=float)
        tol = e.size * np.finfo(float).eps * max(float(e.max(initial=0.0)), 1.0)
        self.eigs = np.where(e > tol, e, 0.0)
        self.dim = self.eigs.size
        self._pos = self.eigs[self.eigs > 0]
        if self._pos.size == 0:
            raise InvalidArgumentError("spectrum has no positive eigenvalue")

    @classmethod
    def of_covariance(cls, X) -> "Spectrum":
        """Spectrum of ``X^T X / n`` (length ``p``)."""
        n, p = X.shape
        Xd = _dense(X)
        G = Xd @ Xd.T / n if p > n else Xd.T @ Xd / n
        e = np.linalg.eigvalsh((G + G.T) / 2)
        return cls(np.concatenate([e, np.zeros(max(p - n, 0))]))

    @classmethod
    def of_gram(cls, X) -> "Spectrum":
        """Spectrum of ``X X^T / n`` (length ``n``)."""
        n, p = X.shape
        Xd = _dense(X)
        G = Xd.T @ Xd / n if n > p else Xd @ Xd.T / n
        e = np.linalg.eigvalsh((G + G.T) / 2)
        return cls(np.concatenate([e, np.zeros(max(n - p, 0))]))

    @classmethod
    def of_matrix(cls, A) -> "Spectrum":
        A = np.asarray(A, dtype=float)
        return cls(np.linalg.eigvalsh((A + A.T) / 2))

    @property
    def min_positive(self) -> float:
        return float(self._pos.min())

    @property
    def rank_fraction(self) -> float:
        return self._pos.size / self.dim

    def _sum(self, f) -> float:
        return float(np.sum(f(self._pos))) / self.dim

    def df(self, mu: float) -> float:
        """``(1/dim) tr[A (A + mu)^{-1}]``; at ``mu = 0`` the rank fraction."""
        if mu == 0:
            return self.rank_fraction
        return self._sum(lambda e: e / (e + mu))

    def w(self, mu: float) -> float:
        return -self.df(mu)

    def dw(self, mu: float) -> float:
        """Derivative of ``w`` in ``mu``: ``(1/dim) tr[A (A + mu)^{-2}]``."""
        return self._sum(lambda e: e / (e + mu) ** 2)

    def df2(self, mu: float) -> float:
        """``(1/dim) tr[A^2 (A + mu)^{-2}]``."""
        return self._sum(lambda e: e**2 / (e + mu) ** 2)


def _as_spectrum(data, mode=Mode.FEATURE) -> Spectrum:
    if isinstance(data, Spectrum):
        return data
    arr = data
    if np.ndim(arr) == 1:
        return Spectrum(arr)
    return Spectrum.of_covariance(arr) if Mode(mode) is Mode.FEATURE else Spectrum.of_gram(arr)


# -- fixed point ----------------------------------------------------------

@dataclass(frozen=True)
class SubordinationSolution:
    lam: float
    mu: float
    alpha: float
    kind: SketchKind
    trace_arg: float
    dmu_dlambda: float
    mode: Mode = Mode.FEATURE

    def residual(self) -> float:
        """``mu / S(w) - lam``, multiplied out so it stays finite at the pole of ``S``."""
        fam, a, w = _family(self.kind), self.alpha, self.trace_arg
        if fam == "identity" or (fam == "orthogonal" and a == 1):
            return self.mu - self.lam
        if fam == "iid":
            return self.mu * (a + w) / a - self.lam
        return self.mu * (a + w) / (a * (1 + w)) - self.lam

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kind"] = self.kind.value
        d["mode"] = self.mode.value
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def _lam_of_mu(spec: Spectrum, kind, alpha, mu) -> float:
    # mu / S(w) multiplied out, finite at the pole w = -alpha
    fam = _family(kind)
    if fam == "identity" or (fam == "orthogonal" and alpha == 1):
        return float(mu)
    w = spec.w(mu)
    if fam == "iid":
        return mu * (alpha + w) / alpha
    return mu * (alpha + w) / (alpha * (1 + w))


def _dlam_dmu(spec: Spectrum, fam: str, alpha: float, mu: float) -> float:
    # derivative of lam(mu) written without dividing by S, so the pole is harmless
    if fam == "identity" or (fam == "orthogonal" and alpha == 1):
        return 1.0
    w, dw = spec.w(mu), spec.dw(mu)
    if fam == "iid":
        return (alpha + w + mu * dw) / alpha
    if fam == "orthogonal":
        return ((alpha + w) * (1 + w) + (1 - alpha) * mu * dw) / (alpha * (1 + w) ** 2)
    return 1.0


def critical_mu(spec: Spectrum, kind, alpha: float) -> float:
    """Left end ``mu*`` of the branch on which ``lam(mu)`` increases."""
    fam = _family(kind)
    lo = -spec.min_positive
    if fam == "identity":
        return lo
    emax = float(spec.eigs.max())
    hi = max(1.0, emax)
    while _dlam_dmu(spec, fam, alpha, hi) <= 0:
        hi *= 2
    # walk towards the left boundary until the derivative turns negative
    prev = hi
    for k in range(1, 200):
        x = lo + (hi - lo) * 2.0 ** (-k)
        if x <= lo:
            break
        if _dlam_dmu(spec, fam, alpha, x) <= 0:
            return brentq(lambda m: _dlam_dmu(spec, fam, alpha, m), x, prev, xtol=1e-15, rtol=1e-15)
        prev = x
    return lo


def _lambda0(spec: Spectrum, kind, alpha: float, mstar: float) -> float:
    if mstar > -spec.min_positive:
        return _lam_of_mu(spec, kind, alpha, mstar)
    # no interior minimum: limit of lam(mu) as mu decreases to -lambda_min^+, where w -> -inf
    fam = _family(kind)
    if fam == "orthogonal":
        return -spec.min_positive / alpha
    if fam == "identity":
        return -spec.min_positive
    return -np.inf


def lambda_min(data, kind, alpha: float, mode=Mode.FEATURE) -> float:
    """``lambda_0``: the smallest ridge level reachable on the increasing branch."""
    spec = _as_spectrum(data, mode)
    if _family(kind) == "identity":
        return -spec.min_positive
    return _lambda0(spec, kind, alpha, critical_mu(spec, kind, alpha))


def _solution(spec, kind, alpha, lam, mu, mode) -> SubordinationSolution:
    fam = _family(kind)
    w = spec.w(mu)
    d = _dlam_dmu(spec, fam, alpha, mu)
    return SubordinationSolution(float(lam), float(mu), float(alpha), SketchKind.parse(kind),
                                 float(w), float(1.0 / d), Mode(mode))


def solve_mu(data, kind, alpha: float, lam: float, mode=Mode.FEATURE) -> SubordinationSolution:
    """Implicit regularization ``mu`` for sketch family ``kind`` at ridge level ``lam``.

    ``data`` is a design matrix, a :class:`Spectrum` or a 1-D eigenvalue array.
    """
    spec = _as_spectrum(data, mode)
    kind = SketchKind.parse(kind)
    fam = _family(kind)
    if fam == "identity":
        if lam <= -spec.min_positive:
            raise SubordinationDomainError(f"lam={lam} is below -lambda_min^+")
        return SubordinationSolution(float(lam), float(lam), float(alpha), kind,
                                     spec.w(lam), 1.0, Mode(mode))
    _check_alpha(alpha)
    mstar = critical_mu(spec, kind, alpha)
    lam0 = _lambda0(spec, kind, alpha, mstar)
    if lam <= lam0:
        raise SubordinationDomainError(f"lam={lam:g} is not above lambda_0={lam0:g}")

    def f(m):
        return _lam_of_mu(spec, kind, alpha, m) - lam

    lo = mstar if mstar > -spec.min_positive else mstar + 1e-12 * max(1.0, abs(mstar))
    hi = max(2 * abs(lam), 1.0)
    while f(hi) < 0:
        hi *= 2
        if hi > 1e300:
            raise SubordinationDomainError("could not bracket mu")
    if f(lo) > 0:
        raise SubordinationDomainError(f"no root above mu*={mstar:g} for lam={lam:g}")
    mu = brentq(f, lo, hi, xtol=1e-15, rtol=1e-15, maxiter=500)
    for _ in range(5):
        d = _dlam_dmu(spec, fam, alpha, mu)
        step = f(mu) / d
        if not np.isfinite(step) or mu - step <= mstar:
            break
        mu -= step
        if abs(step) < 1e-16 * max(1.0, abs(mu)):
            break
    return _solution(spec, kind, alpha, lam, mu, mode)


def solve_lambda_from_mu(data, kind, alpha: float, mu: float, mode=Mode.FEATURE) -> float:
    spec = _as_spectrum(data, mode)
    if _family(kind) == "identity":
        return float(mu)
    _check_alpha(alpha)
    mstar = critical_mu(spec, kind, alpha)
    if mu < mstar:
        raise SubordinationDomainError(
            f"mu={mu:g} is below the smallest attainable value {mstar:g} for alpha={alpha:g}")
    return float(_lam_of_mu(spec, kind, alpha, mu))


def solve_nu(X, kind, eta: float, lam: float) -> SubordinationSolution:
    """Observation-sketch analogue of :func:`solve_mu` on the spectrum of ``X X^T / n``."""
    return solve_mu(_as_spectrum(X, Mode.OBSERVATION), kind, eta, lam, Mode.OBSERVATION)


def curve(data, kind, alpha: float, lams, mode=Mode.FEATURE) -> list[SubordinationSolution]:
    spec = _as_spectrum(data, mode)
    return [solve_mu(spec, kind, alpha, float(l), mode) for l in lams]


def write_curve_csv(solutions, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["lambda", "mu", "alpha", "trace_arg", "dmu_dlambda"])
        for s in solutions:
            w.writerow([s.lam, s.mu, s.alpha, s.trace_arg, s.dmu_dlambda])


def sketched_spectrum(X, S: SketchOperator, covariance: bool = False) -> tuple[Spectrum, np.ndarray]:
    """Spectrum of ``Sigma_hat`` and the positive eigenvalues of ``S^T Sigma_hat S``."""
    if covariance:
        A = np.asarray(X, dtype=float)
        spec = Spectrum.of_matrix(A) if A.ndim == 2 else Spectrum(A)
        d = np.linalg.eigvalsh(S.gram(A if A.ndim == 2 else np.diag(A)))
    else:
        n = X.shape[0]
        spec = Spectrum.of_covariance(X)
        XS = S.apply_right(X)
        G = XS @ XS.T / n if XS.shape[1] > n else XS.T @ XS / n
        d = np.linalg.eigvalsh((G + G.T) / 2)
    d = d[d > d.size * np.finfo(float).eps * max(d.max(initial=0), 1.0)]
    if d.size == 0:
        raise SubordinationDomainError("sketched covariance is zero")
    return spec, d


def empirical_mu_from_spectra(spec: Spectrum, d: np.ndarray, lam: float) -> float:
    """Root ``mu`` of ``(1/p) sum d/(d+lam) = (1/p) tr[Sigma_hat (Sigma_hat + mu)^{-1}]``."""
    if lam <= -d.min():
        raise SubordinationDomainError(f"lam={lam:g} is not above -lambda_min^+ of the sketched Gram")
    target = float(np.sum(d / (d + lam)) / spec.dim) if lam != 0 else d.size / spec.dim

    def f(m):
        return spec.df(m) - target

    lo = -spec.min_positive
    step = spec.min_positive
    while True:
        step /= 2
        if f(lo + step) > 0 or step < 1e-300:
            break
    lo = lo + step
    hi = max(1.0, abs(lam))
    while f(hi) > 0:
        hi *= 2
        if hi > 1e300:
            raise SubordinationDomainError("could not bracket the empirical mu")
    if f(lo) <= 0:
        raise SubordinationDomainError("trace target exceeds the attainable ridge trace")
    return float(brentq(f, lo, hi, xtol=1e-13, rtol=1e-15, maxiter=500))


def empirical_mu(X, S: SketchOperator, lam: float, covariance: bool = False) -> float:
    """Match ``(1/p) tr[Sigma_hat S (S^T Sigma_hat S + lam)^{-1} S^T]`` by a ridge trace.

    ``X`` is a design matrix, or the covariance itself when ``covariance`` is set
    (a 1-D array is read as a diagonal covariance).
    """
    spec, d = sketched_spectrum(X, S, covariance)
    return empirical_mu_from_spectra(spec, d, lam)


def alpha_for_mu(data, mu: float) -> float:
    """Sketch ratio whose ridgeless infinite ensemble behaves like ridge at ``mu``."""
    if mu <= 0:
        raise InvalidArgumentError("mu must be positive")
    return _as_spectrum(data).df(mu)


def ensemble_trick(R1: float, R2: float) -> float:
    """Remove the ``1/K`` variance term: ``2 R2 - R1``."""
    return 2 * R2 - R1


# -- inflation factors ----------------------------------------------------

@dataclass(frozen=True)
class InflationFactors:
    mu_prime: float | None
    mu_dprime: float
    delta: float
    mode: Mode = Mode.FEATURE
    solution: SubordinationSolution | None = None
    # (1/n) y^T G (G + mu)^{-2} y: the quadratic form that multiplies the
    # inflation factor in the ensemble variance
    delta_risk: float | None = None

    def to_dict(self) -> dict:
        return {"mu_prime": self.mu_prime, "mu_dprime": self.mu_dprime, "delta": self.delta,
                "delta_risk": self.delta_risk,
                "mode": self.mode.value,
                "solution": self.solution.to_dict() if self.solution else None}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


class _Eig:
    """Eigendecompositions of ``X^T X / n`` and ``X X^T / n`` for trace formulas."""

    def __init__(self, X):
        Xd = _dense(X)
        self.X = Xd
        self.n, self.p = Xd.shape
        self.ec, self.Vc = np.linalg.eigh(Xd.T @ Xd / self.n)
        self.eg, self.Ug = np.linalg.eigh(Xd @ Xd.T / self.n)
        self.ec = np.clip(self.ec, 0, None)
        self.eg = np.clip(self.eg, 0, None)

    def sigma_quad(self, Sigma) -> np.ndarray:
        """Diagonal of ``V^T Sigma V`` in the eigenbasis of ``X^T X / n``."""
        if Sigma is None:
            return None
        Sigma = np.asarray(Sigma, dtype=float)
        if Sigma.ndim == 1:
            return np.einsum("ij,i,ij->j", self.Vc, Sigma, self.Vc)
        return np.einsum("ij,ik,kj->j", self.Vc, Sigma, self.Vc)

    def delta(self, y, mu, weighted: bool = False) -> float:
        c = self.Ug.T @ np.asarray(y, dtype=float)
        w = self.eg if weighted else 1.0
        return float(np.sum(w * c**2 / (self.eg + mu) ** 2) / self.n)


def _prefactor(sol: SubordinationSolution) -> float:
    return -sol.dmu_dlambda * sol.lam**2 * s_transform_derivative(sol.kind, sol.alpha, sol.trace_arg)


def inflation_factors(X, y, kind, alpha: float, lam: float, Sigma=None) -> InflationFactors:
    """Risk (``mu'``, needs ``Sigma``) and GCV (``mu''``) inflation factors, plus ``Delta``."""
    E = _Eig(X)
    sol = solve_mu(Spectrum(E.ec), kind, alpha, lam)
    mu, n, p = sol.mu, E.n, E.p
    c = _prefactor(sol)
    mu_p = None
    if Sigma is not None:
        mu_p = c * float(np.sum(E.sigma_quad(Sigma) / (E.ec + mu) ** 2)) / p
    num = float(np.sum(E.ec / (E.ec + mu) ** 2)) / p
    den = (1 - float(np.sum(E.ec / (E.ec + mu))) / n) ** 2
    return InflationFactors(mu_p, c * num / den, E.delta(y, mu), Mode.FEATURE, sol,
                            E.delta(y, mu, weighted=True))


def risk_decomposition_predicted(X, y, kind, alpha: float, lam: float, K: int,
                                 risk_fn, Sigma) -> tuple[float, float]:
    """``(R(ridge at mu), variance / K)`` where ``risk_fn`` maps coefficients to their risk.

    The variance term is ``mu' * delta_risk``.
    """
    inf = inflation_factors(X, y, kind, alpha, lam, Sigma)
    bias = float(risk_fn(fit_ridge(X, y, inf.solution.mu)))
    return bias, inf.mu_prime * inf.delta_risk / K


@dataclass(frozen=True)
class ObservationTerms:
    """Pieces of the observation-sketch inflation: ``nu' = C2 C1'`` and ``nu'' = C2 C1``."""

    C1: float
    C1_prime: float | None
    C1_prime_estimate: float
    C2: float
    t: float


def observation_terms(E: _Eig, sol: SubordinationSolution, Sigma=None) -> ObservationTerms:
    nu, n = sol.mu, E.n
    g = E.eg
    t = float(np.sum(g / (g + nu))) / n
    C1 = float(np.sum(g**2 / (g + nu) ** 2)) / n / (1 - t) ** 2
    C1p = None
    if Sigma is not None:
        # (1/n) tr[(G+nu)^{-1} X Sigma X^T / n (G+nu)^{-1}] via the covariance eigenbasis
        Sigma = np.asarray(Sigma, dtype=float)
        M = E.X.T @ (E.Ug / (g + nu))  # p x n
        SM = Sigma @ M if Sigma.ndim == 2 else Sigma[:, None] * M
        C1p = float(np.sum(M * SM)) / n / n
    C1p_est = C1 - (t / (1 - t)) ** 2
    return ObservationTerms(C1, C1p, C1p_est, _prefactor(sol), t)


def observation_inflation(X, y, kind, eta: float, lam: float, Sigma=None) -> InflationFactors:
    """``nu'`` (needs ``Sigma``), ``nu''`` and ``Delta~`` for observation sketching."""
    E = _Eig(X)
    sol = solve_mu(Spectrum(E.eg), kind, eta, lam, Mode.OBSERVATION)
    terms = observation_terms(E, sol, Sigma)
    nu_p = None if terms.C1_prime is None else terms.C2 * terms.C1_prime
    return InflationFactors(nu_p, terms.C2 * terms.C1, E.delta(y, sol.mu), Mode.OBSERVATION, sol,
                            E.delta(y, sol.mu, weighted=True))


def corrected_observation_gcv(X, y, sketches: list[SketchOperator], lam: float, K: int | None = None):
    """GCV for observation-sketched ensembles, corrected for the ``nu' != nu''`` mismatch.

    Needs at least two sketches: single-member and paired-member GCV values feed
    the ensemble trick. Returns a :class:`~freesketch.gcv.RiskReport` for an
    ensemble of ``K`` members (default ``len(sketches)``).
    """
    from .gcv import Estimator, RiskReport, gcv_squared_risk

    y = np.asarray(y, dtype=float)
    if len(sketches) < 2:
        raise RecipeStepError("need at least two sketches for the ensemble trick", 3)
    K = len(sketches) if K is None else K
    S0 = sketches[0]
    try:
        E = _Eig(X)
        sol = solve_mu(Spectrum(E.eg), S0.kind, S0.alpha, lam, Mode.OBSERVATION)
    except Exception as exc:
        raise RecipeStepError(str(exc), 1) from exc
    try:
        delta = E.delta(y, sol.mu)
        terms = observation_terms(E, sol)
    except Exception as exc:
        raise RecipeStepError(str(exc), 2) from exc
    try:
        ens = SketchedEnsemble(Mode.OBSERVATION, X, y, list(sketches))
        k = len(sketches)
        R1 = np.mean([gcv_squared_risk(ens.model(lam, members=[j]), X, y).value for j in range(k)])
        pairs = [[j, j + 1] for j in range(0, k - 1, 2)]
        R2 = np.mean([gcv_squared_risk(ens.model(lam, members=pr), X, y).value for pr in pairs])
        R_ridge = ensemble_trick(R1, R2)
        C = R1 - R_ridge
    except Exception as exc:
        raise RecipeStepError(str(exc), 3) from exc
    if terms.C1 * delta <= 0:
        raise RecipeStepError("C1 * Delta vanished", 4)
    C2 = C / (terms.C1 * delta)
    C1p = terms.C1_prime_estimate
    value = R_ridge + C2 * C1p * delta / K
    meta = {"lambda": lam, "K": K, "q": S0.q, "kind": S0.kind.value, "n": E.n, "p": E.p,
            "nu": sol.mu, "delta": delta, "C": C, "C1": terms.C1, "C2": C2,
            "C2_closed_form": terms.C2, "C1_prime": C1p, "R_ridge": R_ridge,
            "R1": float(R1), "R2": float(R2), "mode": "observation"}
    return RiskReport(Estimator.GCV, float(value), "squared_corrected", meta)
