"""From-scratch numpy scorers (MLP-Q, LSTM, transformer), MSE loss and Adam."""
from .core import adam_step, backward, fit_step, forward, mse_loss
from .gradcheck import check_gradients, numeric_grads, relative_error
from .params import (
    WEIGHTS_MAGIC,
    ParamStore,
    ScorerKind,
    expected_param_count,
    init_bounds,
    init_params,
    load_weights,
    read_weights_version,
    save_weights,
    zero_params,
)

__all__ = [
    "ParamStore",
    "ScorerKind",
    "WEIGHTS_MAGIC",
    "adam_step",
    "backward",
    "check_gradients",
    "expected_param_count",
    "fit_step",
    "forward",
    "init_bounds",
    "init_params",
    "load_weights",
    "mse_loss",
    "numeric_grads",
    "read_weights_version",
    "relative_error",
    "save_weights",
    "zero_params",
]
