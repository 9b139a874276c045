"""Data pipeline: ingestion, standardization, windowing, augmentation, scenarios, synthetic faults."""

from .io import load_csv, load_dataset, save_dataset, write_csv
from .scenario import ScenarioSpec, build_scenario, pools_from_windows, preset_scenario
from .series import (
    RawSeries,
    StandardizerState,
    WindowedSample,
    WindowSet,
    augment_pairs,
    fit_windows,
    sliding_window,
    standardize_apply,
    standardize_array,
    standardize_fit,
    window_count,
)
from .synthetic import (
    SyntheticFaultConfig,
    coupling_matrix,
    generate_fault_dataset,
    generate_synthetic_process,
    te_analog_faults,
    variable_names,
)

__all__ = [
    "RawSeries", "StandardizerState", "WindowedSample", "WindowSet", "ScenarioSpec", "SyntheticFaultConfig",
    "augment_pairs", "build_scenario", "coupling_matrix", "fit_windows", "generate_fault_dataset",
    "generate_synthetic_process", "load_csv", "load_dataset", "pools_from_windows", "preset_scenario",
    "save_dataset", "sliding_window", "standardize_apply", "standardize_array", "standardize_fit",
    "te_analog_faults", "variable_names", "window_count", "write_csv",
]
