"""Command-line entry point: ``freesketch <subcommand> ...``."""
from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from ..errors import FreeSketchError
from ..estimator import FitSpec, Mode, prepare_ensemble
from ..freeness import WORDS, alternating_trace, write_trace_csv
from ..gcv import (
    Estimator,
    RiskReport,
    functional_by_name,
    gcv_functional,
    kfold_cv,
    loocv_functional,
    write_reports_csv,
)
from ..sketching import derive_seed, make_sketch
from ..subordination import Spectrum, curve, write_curve_csv
from .data import SyntheticSpec, generate_synthetic, load_dataset
from .experiments import ExperimentConfig, ExperimentError, run_experiment


def _floats(text: str) -> list[float]:
    return [float(t) for t in text.split(",") if t.strip()]


def _ints(text: str) -> list[int]:
    return [int(t) for t in text.split(",") if t.strip()]


def _add_data_args(sp):
    sp.add_argument("--data", help="CSV or LibSVM file; omit for synthetic data")
    sp.add_argument("--format", default="csv", choices=["csv", "libsvm"])
    sp.add_argument("--center", action="store_true", help="center X columns and y")
    sp.add_argument("--n", type=int, default=500, help="synthetic sample size")
    sp.add_argument("--p", type=int, default=600, help="synthetic dimension")
    sp.add_argument("--seed", type=int, default=0)


def _add_sketch_args(sp):
    sp.add_argument("--kind", default="gaussian")
    sp.add_argument("--q", type=int, required=True, help="sketch size")
    sp.add_argument("--K", type=int, default=1, help="ensemble size")
    sp.add_argument("--mode", default="feature", choices=[m.value for m in Mode])


def _load(args):
    if args.data:
        return tuple(load_dataset(args.data, args.format, center=args.center))
    X, y, _ = generate_synthetic(SyntheticSpec(args.n, args.p, seed=args.seed))
    return X, y


def _emit(obj) -> None:
    print(json.dumps(obj, default=float))


def cmd_fit(args) -> int:
    X, y = _load(args)
    model = prepare_ensemble(X, y, args.kind, args.q, args.K, args.seed, args.mode).model(args.lam)
    out = model.summary()
    if args.out:
        np.savetxt(args.out, model.aggregated_beta, delimiter=",")
        out["coef_path"] = args.out
    _emit(out)
    return 0


def _reports(args, X, y, lambdas) -> list[RiskReport]:
    t = functional_by_name(args.functional)
    est = Estimator(args.estimator)
    ens = prepare_ensemble(X, y, args.kind, args.q, args.K, args.seed, args.mode)
    out = []
    for lam in lambdas:
        if est is Estimator.GCV:
            out.append(gcv_functional(ens.model(lam), X, y, t))
        elif est is Estimator.LOOCV:
            out.append(loocv_functional(ens.model(lam), X, y, t))
        elif est is Estimator.KFOLD:
            spec = FitSpec(args.kind, args.q, args.K, lam, args.mode, args.seed)
            out.append(kfold_cv(X, y, args.folds, spec, t))
        else:
            raise FreeSketchError("the test oracle needs held-out data; use the experiment command")
    return out


def cmd_gcv(args) -> int:
    X, y = _load(args)
    reports = _reports(args, X, y, _floats(args.lambdas))
    for r in reports:
        print(r.to_json())
    if args.out:
        write_reports_csv(reports, args.out)
    return 0


def cmd_tune(args) -> int:
    X, y = _load(args)
    reports = _reports(args, X, y, _floats(args.lambdas))
    best = min(reports, key=lambda r: r.value)
    _emit({"best_lambda": best.meta["lambda"], "best_value": best.value,
           "path": [{"lambda": r.meta["lambda"], "value": r.value} for r in reports]})
    return 0


def cmd_subordination(args) -> int:
    if args.spectrum:
        spec = Spectrum(_floats(args.spectrum))
    else:
        X, _ = _load(args)
        spec = Spectrum.of_covariance(X) if args.mode == "feature" else Spectrum.of_gram(X)
    sols = curve(spec, args.kind, args.alpha, _floats(args.lambdas), args.mode)
    for s in sols:
        print(s.to_json())
    if args.out:
        write_curve_csv(sols, args.out)
    return 0


def cmd_freeness(args) -> int:
    rows = []
    for p in _ints(args.ps):
        q = max(1, int(round(args.alpha * p)))
        a = np.linspace(0.5, 1.5, p)
        for trial in range(args.trials):
            S = make_sketch(args.kind, p, q, derive_seed(args.seed, trial, p))
            for word in WORDS:
                rows.append({"word": str(word), "p": p, "value": alternating_trace(a, S, word),
                             "trial": trial, "kind": args.kind, "q": q})
    for r in rows:
        _emit(r)
    if args.out:
        write_trace_csv(rows, args.out)
    return 0


def cmd_experiment(args) -> int:
    if args.config:
        with open(args.config) as fh:
            d = json.load(fh)
    else:
        d = {}
    if args.experiment:
        d["experiment"] = args.experiment
    if "experiment" not in d:
        raise FreeSketchError("--experiment or a config with an 'experiment' field is required")
    for flag, key in (("seed", "seed"), ("trials", "trials"), ("out", "output_path"),
                      ("threads", "threads")):
        v = getattr(args, flag)
        if v is not None:
            d[key] = v
    cfg = ExperimentConfig.from_dict(d)
    rows = run_experiment(cfg)
    if not cfg.output_path:
        for r in rows:
            _emit(r)
    else:
        print(f"wrote {len(rows)} rows to {cfg.output_path}", file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="freesketch", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("fit", help="fit a sketched ridge ensemble")
    _add_data_args(sp)
    _add_sketch_args(sp)
    sp.add_argument("--lam", type=float, required=True)
    sp.add_argument("--out", help="write aggregated coefficients here")
    sp.set_defaults(func=cmd_fit)

    for name, func, help_ in (("gcv", cmd_gcv, "risk estimates along a lambda path"),
                              ("tune", cmd_tune, "pick lambda by minimizing a risk estimate")):
        sp = sub.add_parser(name, help=help_)
        _add_data_args(sp)
        _add_sketch_args(sp)
        sp.add_argument("--lambdas", required=True, help="comma-separated ridge levels")
        sp.add_argument("--functional", default="squared")
        sp.add_argument("--estimator", default="GCV", choices=["GCV", "LOOCV", "KFold"])
        sp.add_argument("--folds", type=int, default=5)
        sp.add_argument("--out")
        sp.set_defaults(func=func)

    sp = sub.add_parser("subordination", help="solve for the implicit ridge level")
    _add_data_args(sp)
    sp.add_argument("--spectrum", help="comma-separated eigenvalues instead of data")
    sp.add_argument("--kind", default="gaussian")
    sp.add_argument("--alpha", type=float, required=True)
    sp.add_argument("--lambdas", required=True)
    sp.add_argument("--mode", default="feature", choices=["feature", "observation"])
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_subordination)

    sp = sub.add_parser("freeness", help="alternating trace diagnostics")
    sp.add_argument("--kind", default="srdct")
    sp.add_argument("--ps", default="200,400,800")
    sp.add_argument("--alpha", type=float, default=0.836)
    sp.add_argument("--trials", type=int, default=10)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_freeness)

    sp = sub.add_parser("experiment", help="run a configured experiment")
    sp.add_argument("--experiment")
    sp.add_argument("--config", help="JSON config; flags override its fields")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--trials", type=int)
    sp.add_argument("--out")
    sp.add_argument("--threads", type=int)
    sp.set_defaults(func=cmd_experiment)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ExperimentError as exc:
        print(json.dumps(exc.report(), default=float), file=sys.stderr)
        return 2
    except (FreeSketchError, OSError, ValueError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
