"""Timestamp-conditioned patch forecasting on a frozen byte-level decoder."""

from .tensor import Tensor, concat, gelu, layer_norm, no_grad, sigmoid, softmax_rows
from .params import ParamRegistry, make_rng, read_checkpoint, save_checkpoint
from .gradcheck import finite_difference_check
from .data import (
    RawSeries,
    Window,
    generate_synthetic,
    load_csv,
    make_windows,
    split_windows,
    write_csv,
)
from .backbone import Backbone, DecoderConfig
from .prompts import BankBuilder, TemporalSpan, render_prompt, spans_for_window
from .model import (
    ForecastModel,
    ModelConfig,
    TrainConfig,
    evaluate_loss,
    evaluate_rollout,
    fit,
    format_param_report,
    mse_mae,
    param_report,
    persistence_forecast,
)
from .ablation import format_ablation_table, run_ablation, temporal_signal_experiment
from .config import load_config, resolve_config, serialize_config

__all__ = [
    "Tensor",
    "concat",
    "gelu",
    "layer_norm",
    "no_grad",
    "sigmoid",
    "softmax_rows",
    "ParamRegistry",
    "make_rng",
    "save_checkpoint",
    "read_checkpoint",
    "finite_difference_check",
    "RawSeries",
    "Window",
    "generate_synthetic",
    "load_csv",
    "write_csv",
    "make_windows",
    "split_windows",
    "Backbone",
    "DecoderConfig",
    "BankBuilder",
    "TemporalSpan",
    "render_prompt",
    "spans_for_window",
    "ForecastModel",
    "ModelConfig",
    "TrainConfig",
    "fit",
    "evaluate_loss",
    "evaluate_rollout",
    "mse_mae",
    "persistence_forecast",
    "param_report",
    "format_param_report",
    "run_ablation",
    "format_ablation_table",
    "temporal_signal_experiment",
    "load_config",
    "resolve_config",
    "serialize_config",
]
