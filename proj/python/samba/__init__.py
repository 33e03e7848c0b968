"""Bidirectional electrophysiological/hemodynamic signal translation.

Thin wrapper over the compiled core: configs travel as JSON text, signals as
numpy arrays (parcels x samples).
"""

from samba._samba import (
    Dataset,
    Model,
    SambaArgumentError,
    SambaConfigError,
    SambaContractError,
    SambaDataError,
    SambaDimensionError,
    SambaError,
    SambaNumericError,
    WindowSet,
    build_model,
    config_hash,
    default_model_config,
    default_synth_config,
    default_train_config,
    evaluate_oracle,
    generate,
    load_checkpoint,
    load_dataset,
    spearman,
    spectral_synth_config,
    split_windows,
)

__all__ = [
    "Dataset",
    "Model",
    "SambaArgumentError",
    "SambaConfigError",
    "SambaContractError",
    "SambaDataError",
    "SambaDimensionError",
    "SambaError",
    "SambaNumericError",
    "WindowSet",
    "build_model",
    "config_hash",
    "default_model_config",
    "default_synth_config",
    "default_train_config",
    "evaluate_oracle",
    "generate",
    "load_checkpoint",
    "load_dataset",
    "spearman",
    "spectral_synth_config",
    "split_windows",
]
