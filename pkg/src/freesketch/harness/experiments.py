"""Experiment orchestration: configs, per-trial runners and result persistence."""
from __future__ import annotations

import csv
import dataclasses
import enum
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..errors import FreeSketchError, InvalidArgumentError
from ..estimator import FitSpec, Mode, SketchedEnsemble, predict, prepare_ensemble
from ..freeness import WORDS, alternating_trace, logistic_diagonal, subordination_scatter
from ..gcv import (
    Estimator,
    functional_by_name,
    gcv_corrected_pairs,
    gcv_functional,
    gcv_squared_risk,
    kfold_cv,
    loocv_functional,
    prediction_interval,
    test_functional,
)
from ..sketching import SketchKind, derive_seed, make_sketch
from ..subordination import (
    Spectrum,
    corrected_observation_gcv,
    empirical_mu,
    ensemble_trick,
    s_transform,
    solve_mu,
    solve_nu,
)
from .data import SyntheticSpec, generate_synthetic

COLUMNS = ("experiment", "trial", "kind", "n", "p", "q", "K", "lambda", "mu",
           "estimator", "functional", "value")


class ExperimentKind(str, enum.Enum):
    GCV_PATH = "GcvPath"
    SKETCH_SIZE_SWEEP = "SketchSizeSweep"
    INTERVALS = "Intervals"
    ENSEMBLE_TRICK = "EnsembleTrick"
    RATE_IN_K = "RateInK"
    FREENESS = "Freeness"
    SUBORDINATION_SCATTER = "SubordinationScatter"
    OBSERVATION_CORRECTION = "ObservationCorrection"

    @classmethod
    def parse(cls, value) -> "ExperimentKind":
        if isinstance(value, cls):
            return value
        key = str(value).replace("_", "").replace("-", "").lower()
        for member in cls:
            if member.value.lower() == key:
                return member
        raise InvalidArgumentError(f"unknown experiment {value!r}")


@dataclass
class ExperimentConfig:
    experiment: ExperimentKind = ExperimentKind.GCV_PATH
    lambdas: list = field(default_factory=lambda: [0.2])
    qs: list = field(default_factory=lambda: [441])
    Ks: list = field(default_factory=lambda: [5])
    kinds: list = field(default_factory=lambda: ["gaussian"])
    trials: int = 1
    seed: int = 0
    output_path: str | None = None
    # data
    n: int = 500
    p: int = 600
    sigma_family: str = "identity"
    response: str = "linear"
    sigma_xi: float = 1.0
    beta: str = "dense"
    support: int | None = None
    # estimators
    estimators: list = field(default_factory=lambda: ["GCV", "TestOracle"])
    functionals: list = field(default_factory=lambda: ["squared"])
    folds: int = 5
    n_test: int | None = None
    # experiment-specific knobs
    levels: list = field(default_factory=lambda: [0.95, 0.99])
    modes: list = field(default_factory=lambda: ["feature", "observation"])
    members: int = 200
    ps: list = field(default_factory=lambda: [200, 400, 800, 1600])
    alpha: float = 0.836
    grid: int = 5
    threads: int | None = None

    def __post_init__(self):
        self.experiment = ExperimentKind.parse(self.experiment)
        self.kinds = [SketchKind.parse(k).value for k in self.kinds]
        if self.trials < 1:
            raise InvalidArgumentError("trials must be at least 1")
        for name in ("lambdas", "qs", "Ks", "kinds"):
            if not getattr(self, name):
                raise InvalidArgumentError(f"grid {name!r} is empty")
        if any(int(K) < 1 for K in self.Ks):
            raise InvalidArgumentError("ensemble sizes must be positive")

    @classmethod
    def preset(cls, experiment, **overrides) -> "ExperimentConfig":
        """Defaults mirroring the reference setup of each experiment."""
        kind = ExperimentKind.parse(experiment)
        base = dict(_PRESETS.get(kind, {}))
        base.update(overrides)
        return cls(experiment=kind, **base)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        extra = set(d) - known
        if extra:
            raise InvalidArgumentError(f"unknown config fields: {sorted(extra)}")
        if "experiment" in d:
            return cls.preset(d["experiment"], **{k: v for k, v in d.items() if k != "experiment"})
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["experiment"] = self.experiment.value
        return d

    def data_spec(self, trial: int, **overrides) -> SyntheticSpec:
        kw = dict(n=self.n, p=self.p, sigma_family=self.sigma_family, response=self.response,
                  sigma_xi=self.sigma_xi, beta=self.beta, support=self.support,
                  seed=derive_seed(self.seed, trial))
        kw.update(overrides)
        return SyntheticSpec(**kw)

    @property
    def test_size(self) -> int:
        return self.n_test if self.n_test is not None else max(2000, 2 * self.n)


_ALL_KINDS = ["gaussian", "orthogonal", "countsketch", "srdct"]

_PRESETS = {
    ExperimentKind.GCV_PATH: dict(n=500, p=600, qs=[441], Ks=[5], kinds=_ALL_KINDS,
                                  lambdas=[0.05, 0.2, 1.0, 5.0]),
    ExperimentKind.SKETCH_SIZE_SWEEP: dict(n=500, p=600, qs=[150, 300, 441, 600], Ks=[1, 5],
                                           lambdas=[0.2], kinds=["gaussian"]),
    ExperimentKind.INTERVALS: dict(n=1500, p=1000, sigma_xi=0.0, response="soft_threshold",
                                   kinds=["srdct"], qs=[480], Ks=[5], lambdas=[1.0],
                                   estimators=["GCV"]),
    ExperimentKind.ENSEMBLE_TRICK: dict(n=600, p=800, sigma_family="decay", sigma_xi=2.0,
                                        beta="sparse", support=80, kinds=["srdct"], qs=[400],
                                        Ks=[2], lambdas=[0.1]),
    ExperimentKind.RATE_IN_K: dict(n=140, p=200, qs=[156], Ks=[1, 2, 4, 8, 16, 32, 64],
                                   lambdas=[0.1], kinds=["gaussian"], members=200),
    ExperimentKind.FREENESS: dict(kinds=["countsketch", "srdct"], alpha=0.836, qs=[0], Ks=[1],
                                  lambdas=[0.0], ps=[200, 400, 800, 1600]),
    ExperimentKind.SUBORDINATION_SCATTER: dict(kinds=["countsketch", "srdct"], p=700, qs=[585],
                                               Ks=[1], lambdas=[0.01, 0.1, 1.0, 10.0, 100.0],
                                               grid=5),
    ExperimentKind.OBSERVATION_CORRECTION: dict(n=600, p=800, sigma_family="decay", kinds=["gaussian"],
                                                qs=[420], Ks=[1], lambdas=[0.2]),
}


class ExperimentError(FreeSketchError):
    """A runner failed; ``point`` names the grid point."""

    def __init__(self, message: str, point: dict):
        super().__init__(message)
        self.point = point

    def report(self) -> dict:
        return {"error": type(self.__cause__).__name__ if self.__cause__ else "ExperimentError",
                "message": str(self), "grid_point": self.point}


class _Point:
    """Context manager tagging failures with the grid point being evaluated."""

    def __init__(self, **point):
        self.point = point

    def __enter__(self):
        return self

    def __exit__(self, et, exc, tb):
        if exc is None or isinstance(exc, ExperimentError):
            return False
        desc = ", ".join(f"{k}={v}" for k, v in self.point.items())
        raise ExperimentError(f"{desc}: {exc}", self.point) from exc


def _row(cfg, trial, kind, n, p, q, K, lam, mu, estimator, functional, value, **extra) -> dict:
    return {"experiment": cfg.experiment.value, "trial": trial, "kind": kind, "n": n, "p": p,
            "q": q, "K": K, "lambda": lam, "mu": mu, "estimator": estimator,
            "functional": functional, "value": float(value), **extra}


def _safe_mu(solver) -> float:
    try:
        return solver().mu
    except FreeSketchError:
        return float("nan")


# -- runners -------------------------------------------------------------


def _run_gcv_path(cfg: ExperimentConfig, trial: int) -> list[dict]:
    spec = cfg.data_spec(trial)
    X, y, truth = generate_synthetic(spec)
    n, p = X.shape
    exact = spec.response.value == "linear"
    test = None
    spectrum = Spectrum.of_covariance(X)
    funcs = [functional_by_name(f) for f in cfg.functionals]
    ests = [Estimator(e) for e in cfg.estimators]
    if any(f.name != "squared" for f in funcs) or not exact:
        test = truth.sample(cfg.test_size)
    Kmax = max(int(K) for K in cfg.Ks)
    rows = []
    for ki, kind in enumerate(cfg.kinds):
        for q in cfg.qs:
            q = int(q)
            with _Point(trial=trial, kind=kind, q=q):
                ens = prepare_ensemble(X, y, kind, q, Kmax, derive_seed(cfg.seed, trial, ki, q))
            for K in cfg.Ks:
                K = int(K)
                for lam in cfg.lambdas:
                    lam = float(lam)
                    with _Point(trial=trial, kind=kind, q=q, K=K, lam=lam):
                        mu = _safe_mu(lambda: solve_mu(spectrum, kind, q / p, lam))
                        model = ens.model(lam, members=range(K))
                        common = (cfg, trial, kind, n, p, q, K, lam, mu)
                        for t in funcs:
                            for est in ests:
                                if est is Estimator.GCV:
                                    val = gcv_functional(model, X, y, t).value
                                elif est is Estimator.LOOCV:
                                    val = loocv_functional(model, X, y, t).value
                                elif est is Estimator.KFOLD:
                                    fs = FitSpec(kind, q, K, lam, seed=derive_seed(cfg.seed, trial, ki, q, 1))
                                    val = kfold_cv(X, y, cfg.folds, fs, t).value
                                elif t.name == "squared" and exact:
                                    val = truth.linear_risk(model.aggregated_beta)
                                else:
                                    val = test_functional(model, *test, t).value
                                rows.append(_row(*common, est.value, t.name, val))
    return rows


def _run_intervals(cfg: ExperimentConfig, trial: int) -> list[dict]:
    X, y, truth = generate_synthetic(cfg.data_spec(trial))
    X0, y0 = truth.sample(cfg.test_size)
    n, p = X.shape
    rows = []
    for ki, kind in enumerate(cfg.kinds):
        for q in map(int, cfg.qs):
            for K in map(int, cfg.Ks):
                ens = prepare_ensemble(X, y, kind, q, K, derive_seed(cfg.seed, trial, ki, q))
                for lam in map(float, cfg.lambdas):
                    with _Point(trial=trial, kind=kind, q=q, K=K, lam=lam):
                        model = ens.model(lam)
                        dist = gcv_corrected_pairs(model, X, y)
                        r0 = y0 - predict(model, X0)
                        mu = _safe_mu(lambda: solve_mu(X, kind, q / p, lam))
                        for level in cfg.levels:
                            tail = (1 - level) / 2
                            lo, hi = prediction_interval(dist, tail, 1 - tail)
                            cover = np.mean((r0 >= lo) & (r0 <= hi))
                            rows.append(_row(cfg, trial, kind, n, p, q, K, lam, mu, "TestOracle",
                                             f"coverage@{level:g}", cover, lower=lo, upper=hi))
    return rows


def _ridge_gcv(X, y, mu: float) -> float:
    return gcv_squared_risk(SketchedEnsemble(Mode.UNSKETCHED, X, y, [None]).model(mu), X, y).value


def _run_ensemble_trick(cfg: ExperimentConfig, trial: int) -> list[dict]:
    X, y, _ = generate_synthetic(cfg.data_spec(trial))
    n, p = X.shape
    rows = []
    for mode in map(Mode, cfg.modes):
        for ki, kind in enumerate(cfg.kinds):
            for q in map(int, cfg.qs):
                for lam in map(float, cfg.lambdas):
                    with _Point(trial=trial, mode=mode.value, kind=kind, q=q, lam=lam):
                        ens = prepare_ensemble(X, y, kind, q, 2,
                                               derive_seed(cfg.seed, trial, ki, q), mode)
                        R1 = np.mean([gcv_squared_risk(ens.model(lam, members=[k]), X, y).value
                                      for k in range(2)])
                        R2 = gcv_squared_risk(ens.model(lam), X, y).value
                        if mode is Mode.FEATURE:
                            mu = solve_mu(X, kind, q / p, lam).mu
                        else:
                            mu = solve_nu(X, kind, q / n, lam).mu
                        ref = _ridge_gcv(X, y, mu)
                        trick = ensemble_trick(R1, R2)
                        rows.append(_row(cfg, trial, kind, n, p, q, 2, lam, mu, "GCV", "squared_trick",
                                         trick, mode=mode.value, R1=R1, R2=R2, ridge_gcv=ref,
                                         rel_error=abs(trick - ref) / ref))
    return rows


def _run_rate_in_k(cfg: ExperimentConfig, trial: int) -> list[dict]:
    spec = cfg.data_spec(trial)
    X, y, truth = generate_synthetic(spec)
    n, p = X.shape
    ridge = SketchedEnsemble(Mode.UNSKETCHED, X, y, [None])
    M = int(cfg.members)
    rows = []
    for ki, kind in enumerate(cfg.kinds):
        for q in map(int, cfg.qs):
            for lam in map(float, cfg.lambdas):
                with _Point(trial=trial, kind=kind, q=q, lam=lam):
                    ens = prepare_ensemble(X, y, kind, q, M, derive_seed(cfg.seed, trial, ki, q))
                    pool = ens.model(lam)
                    betas = np.array([pool.member_beta(k) for k in range(M)])
                    # equivalent ridge level, matched numerically on each member
                    mu = float(np.mean([empirical_mu(X, m.sketch, lam) for m in pool.members]))
                    rm = ridge.model(mu)
                    ridge_risk = truth.linear_risk(rm.aggregated_beta)
                    ridge_gcv = gcv_squared_risk(rm, X, y).value
                for K in map(int, cfg.Ks):
                    with _Point(trial=trial, kind=kind, q=q, lam=lam, K=K):
                        if K > M:
                            raise InvalidArgumentError(f"K={K} exceeds the pool of {M} members")
                        groups = [range(j * K, (j + 1) * K) for j in range(M // K)]
                        risk = np.mean([truth.linear_risk(betas[list(g)].mean(axis=0)) for g in groups])
                        gcv = np.mean([gcv_squared_risk(ens.model(lam, members=g), X, y).value
                                       for g in groups])
                    rows.append(_row(cfg, trial, kind, n, p, q, K, lam, mu, "GCV", "squared", gcv,
                                     risk=risk, risk_excess=risk - ridge_risk, gcv_excess=gcv - ridge_gcv,
                                     ridge_gcv=ridge_gcv, ridge_risk=ridge_risk, groups=len(groups)))
    return rows


def _run_freeness(cfg: ExperimentConfig, trial: int) -> list[dict]:
    rows = []
    for ki, kind in enumerate(cfg.kinds):
        for p in map(int, cfg.ps):
            q = max(1, int(round(cfg.alpha * p)))
            a = np.linspace(0.5, 1.5, p)
            with _Point(trial=trial, kind=kind, p=p, q=q):
                S = make_sketch(kind, p, q, derive_seed(cfg.seed, trial, ki, p))
                for word in WORDS:
                    val = alternating_trace(a, S, word)
                    rows.append(_row(cfg, trial, kind, p, p, q, 1, float("nan"), float("nan"),
                                     "trace", str(word), val))
    return rows


def scatter_grid(grid: int):
    """``(a0, s0, t0)`` triples: log-spaced scales in [0.1, 10], centers in [0, 1]."""
    scales = np.logspace(-1, 1, grid)
    centers = np.linspace(0, 1, grid)
    return [(a0, s0, t0) for a0 in scales for s0 in scales for t0 in centers]


def _run_scatter(cfg: ExperimentConfig, trial: int) -> list[dict]:
    rows = []
    p = int(cfg.p)
    for ki, kind in enumerate(cfg.kinds):
        fam = "orthogonal" if SketchKind.parse(kind) in (SketchKind.ORTHOGONAL, SketchKind.SRDCT) \
            else "gaussian"
        for q in map(int, cfg.qs):
            S = make_sketch(kind, p, q, derive_seed(cfg.seed, trial, ki, q))
            for a0, s0, t0 in scatter_grid(cfg.grid):
                A = logistic_diagonal(p, a0, s0, t0)
                with _Point(trial=trial, kind=kind, q=q, a0=a0, s0=s0, t0=t0):
                    pts = subordination_scatter(A, S, cfg.lambdas)
                for lam, (w, ratio) in zip(cfg.lambdas, pts):
                    curve = s_transform(fam, q / p, w)
                    rows.append(_row(cfg, trial, kind, p, p, q, 1, float(lam), ratio * lam,
                                     "empirical", "mu_over_lambda", ratio, trace_arg=w,
                                     curve=curve, a0=a0, s0=s0, t0=t0))
    return rows


def _run_observation(cfg: ExperimentConfig, trial: int) -> list[dict]:
    spec = cfg.data_spec(trial)
    X, y, truth = generate_synthetic(spec)
    n, p = X.shape
    rows = []
    for ki, kind in enumerate(cfg.kinds):
        for m in map(int, cfg.qs):
            pool = max(4, max(map(int, cfg.Ks)))
            pool += pool % 2
            ens = prepare_ensemble(X, y, kind, m, pool, derive_seed(cfg.seed, trial, ki, m),
                                   Mode.OBSERVATION)
            for lam in map(float, cfg.lambdas):
                for K in map(int, cfg.Ks):
                    with _Point(trial=trial, kind=kind, m=m, lam=lam, K=K):
                        naive = np.mean([gcv_squared_risk(ens.model(lam, members=range(j, j + K)), X, y).value
                                         for j in range(0, pool - K + 1, K)])
                        corr = corrected_observation_gcv(X, y, ens.sketches, lam, K)
                        risk = np.mean([truth.linear_risk(ens.model(lam, members=range(j, j + K)).aggregated_beta)
                                        for j in range(0, pool - K + 1, K)])
                    nu = corr.meta["nu"]
                    common = (cfg, trial, kind, n, p, m, K, lam, nu)
                    rows.append(_row(*common, "GCV", "squared", naive))
                    rows.append(_row(*common, "GCV", "squared_corrected", corr.value))
                    rows.append(_row(*common, "TestOracle", "squared", risk))
    return rows


_RUNNERS = {
    ExperimentKind.GCV_PATH: _run_gcv_path,
    ExperimentKind.SKETCH_SIZE_SWEEP: _run_gcv_path,
    ExperimentKind.INTERVALS: _run_intervals,
    ExperimentKind.ENSEMBLE_TRICK: _run_ensemble_trick,
    ExperimentKind.RATE_IN_K: _run_rate_in_k,
    ExperimentKind.FREENESS: _run_freeness,
    ExperimentKind.SUBORDINATION_SCATTER: _run_scatter,
    ExperimentKind.OBSERVATION_CORRECTION: _run_observation,
}


def default_threads() -> int:
    env = os.environ.get("FREESKETCH_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise InvalidArgumentError(f"FREESKETCH_THREADS={env!r} is not an integer") from None
    return os.cpu_count() or 1


def run_experiment(cfg: ExperimentConfig) -> list[dict]:
    """Run every trial and return rows ordered by trial; writes files if ``output_path`` is set."""
    runner = _RUNNERS[cfg.experiment]
    threads = cfg.threads or default_threads()
    if threads == 1 or cfg.trials == 1:
        per_trial = [runner(cfg, t) for t in range(cfg.trials)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_trial = list(pool.map(lambda t: runner(cfg, t), range(cfg.trials)))
    rows = [r for chunk in per_trial for r in chunk]
    if cfg.output_path:
        write_results(rows, cfg)
    return rows


def write_results(rows: list[dict], cfg: ExperimentConfig) -> None:
    """Long-format CSV plus a JSON sidecar holding the config, seeds and a timestamp."""
    path = cfg.output_path
    extras = list(dict.fromkeys(k for r in rows for k in r if k not in COLUMNS))
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(COLUMNS) + extras, restval="")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    sidecar = {"config": cfg.to_dict(),
               "trial_seeds": [derive_seed(cfg.seed, t) for t in range(cfg.trials)],
               "rows": len(rows), "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z")}
    with open(f"{path}.json", "w") as fh:
        json.dump(sidecar, fh, indent=2)
