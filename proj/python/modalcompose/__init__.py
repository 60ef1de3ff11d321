from ._core import (
    ConfigError,
    ContractError,
    Env,
    EnvSpec,
    EnvState,
    Error,
    FileFormatError,
    NumericError,
    ShapeError,
    alpha_bar,
    apply_strategy,
    dataset_info,
    ema,
    evaluate,
    generate_dataset,
    train,
)

__all__ = [
    "ConfigError",
    "ContractError",
    "Env",
    "EnvSpec",
    "EnvState",
    "Error",
    "FileFormatError",
    "NumericError",
    "ShapeError",
    "alpha_bar",
    "apply_strategy",
    "dataset_info",
    "ema",
    "evaluate",
    "generate_dataset",
    "train",
]
