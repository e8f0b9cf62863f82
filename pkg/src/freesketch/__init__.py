"""Sketched ridge ensembles with GCV risk estimation and free-probability tools."""
from .errors import *  # noqa: F401,F403
from .sketching import SketchKind, SketchOperator, make_sketch, apply_right, apply_transpose, materialize
from .estimator import (FitConfig, Hutchinson, Mode, EnsembleModel, SketchedEnsemble, fit_ensemble,
                        fit_ridge, fit_sketched_member, fit_observation_sketched_member, predict,
                        smoother_trace, smoother_diag, prepare_ensemble)

__version__ = "0.1.0"
