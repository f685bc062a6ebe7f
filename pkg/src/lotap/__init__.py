"""Low-rank tensor autoregressive forecasting with t-product factorizations."""

__version__ = "0.1.0"

from .ar import ArCoefficients, fit_yule_walker, predict_next
from .data import SynConfig, TensorSeries, generate_syn, load_series, save_series, split
from .errors import (
    DimensionError,
    FormatError,
    InsufficientDataError,
    LotapError,
    NumericalError,
    ValidationError,
)
from .evaluate import EvalReport, mspe, persistence_mspe, rolling_evaluate
from .model import DiagMode, FitConfig, FitReport, LotapModel, fit, forecast, load_model, save_model
from .tensor import bcirc_oracle, conj_transpose, identity_tensor, t_product
from .tsvd import TruncatedTSVD, avg_tucker_rank, subspace_residual, truncated_tsvd, tubal_rank
