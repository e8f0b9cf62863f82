"""Synthetic data, dataset loading, experiment orchestration and the CLI."""
from .data import (BetaKind, Dataset, Response, SigmaFamily, SyntheticSpec, Truth,
                   generate_synthetic, load_dataset, soft_threshold, write_csv_dataset)
from .experiments import (COLUMNS, ExperimentConfig, ExperimentError, ExperimentKind,
                          run_experiment, write_results)
from .cli import main
