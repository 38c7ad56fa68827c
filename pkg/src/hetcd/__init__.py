"""Change detection between images from different sensors via two-way
pixel regression (Gaussian process, MIMO SVR, random forest, HPT)."""

from .kernels import BACKEND
from .raster import Raster, TrainingSet, read_raster, write_raster
from .regress import RegressorSpec, fit, predict_raster
from .pipeline import ChangeResult, run_pipeline
from .evaluation import roc_auc

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "Raster", "TrainingSet", "read_raster", "write_raster",
    "RegressorSpec", "fit", "predict_raster", "ChangeResult", "run_pipeline", "roc_auc",
]
