"""Temporal Kolmogorov-Arnold networks for limit-order-book mid-price forecasting."""

__version__ = "0.1.0"

from .kernels import BACKEND  # noqa: E402
from .splines import SplineGrid, make_uniform_grid  # noqa: E402
from .kan import KanLayer, init_kan  # noqa: E402
from .recurrent import LstmCell, TkanCell  # noqa: E402
from .models import Forecaster, ModelConfig, build_model, param_count  # noqa: E402

__all__ = [
    "BACKEND",
    "Forecaster",
    "KanLayer",
    "LstmCell",
    "ModelConfig",
    "SplineGrid",
    "TkanCell",
    "build_model",
    "init_kan",
    "make_uniform_grid",
    "param_count",
]
