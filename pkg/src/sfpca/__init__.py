"""Bayesian sparse functional principal component analysis for longitudinal data."""

from .basis import OrthonormalBasis, build_basis, place_knots
from .data import LongitudinalDataset, Subject, from_arrays, from_records, load_csv, write_csv
from .fit import FitResult, fit_sfpca, prepare
from .model import ModelSpec
from .nuts import SamplerConfig, SamplerResult, sample
from .predict import fitted_curves, replicate, subject_trajectory
from .psis import LooReport, compare_models, compute_loo
from .rotate import RotatedDraws, align_draws, rotate_all, variance_explained
from .selection import select_models
from .simulate import SimulationTruth, default_truth, generate, score_recovery

__version__ = "0.1.0"

__all__ = [
    "FitResult", "LongitudinalDataset", "LooReport", "ModelSpec", "OrthonormalBasis", "RotatedDraws",
    "SamplerConfig", "SamplerResult", "SimulationTruth", "Subject", "align_draws", "build_basis",
    "compare_models", "compute_loo", "default_truth", "fit_sfpca", "fitted_curves", "from_arrays",
    "from_records", "generate", "load_csv", "place_knots", "prepare", "replicate", "rotate_all",
    "sample", "score_recovery", "select_models", "subject_trajectory", "variance_explained", "write_csv",
]
