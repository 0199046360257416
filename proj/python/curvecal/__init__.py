"""Curvature-aware calibration for 4x4 resistive tactile arrays."""

from ._curvecal import (
    ConfigError,
    ContaminationError,
    DataRejectedError,
    DegenerateDataError,
    DomainError,
    Error,
    FormatError,
    ProtocolError,
    UsageError,
    dihedral_transform,
    extract_features,
    fit_surface,
    global_statistics,
    predict_curvature,
    predict_force,
    readout_voltage,
    reference_surface,
    run_pipeline,
    session_trace,
    sha256_hex,
    simulate_frames,
)

__all__ = [
    "ConfigError",
    "ContaminationError",
    "DataRejectedError",
    "DegenerateDataError",
    "DomainError",
    "Error",
    "FormatError",
    "ProtocolError",
    "UsageError",
    "dihedral_transform",
    "extract_features",
    "fit_surface",
    "global_statistics",
    "predict_curvature",
    "predict_force",
    "readout_voltage",
    "reference_surface",
    "run_pipeline",
    "session_trace",
    "sha256_hex",
    "simulate_frames",
]
