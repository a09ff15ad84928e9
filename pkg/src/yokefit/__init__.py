"""Stochastic B(H)-curve modelling and yoke material identification."""

from ._kernels import numba_enabled
from .curves import (MonotoneCurve, PermeameterTable, fit_monotone_spline,
                     load_ensemble, read_table_csv, synth_ensemble,
                     write_ensemble, write_table_csv)
from .inversion import (ErrorMetrics, IdentificationResult, ObservationSet,
                        PsoConfig, error_metrics, identify,
                        load_observations, objective, objective_regularized,
                        pso_minimize, save_observations)
from .kle import (EnsembleStatistics, MaterialModel, build_model,
                  estimate_statistics, evaluate_model, load_model, save_model,
                  solve_eigenproblem)
from .sensitivity import (SensitivityField, mode_perturbation, rank_probes,
                          solve_gateaux)

__version__ = "0.1.0"

__all__ = [
    "numba_enabled",
    "MonotoneCurve", "PermeameterTable", "fit_monotone_spline",
    "synth_ensemble", "read_table_csv", "write_table_csv",
    "load_ensemble", "write_ensemble",
    "EnsembleStatistics", "MaterialModel", "estimate_statistics",
    "solve_eigenproblem", "build_model", "evaluate_model",
    "save_model", "load_model",
    "SensitivityField", "mode_perturbation", "solve_gateaux", "rank_probes",
    "ObservationSet", "PsoConfig", "IdentificationResult", "ErrorMetrics",
    "objective", "objective_regularized", "identify", "pso_minimize",
    "error_metrics", "save_observations", "load_observations",
]
