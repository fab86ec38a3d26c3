"""Conditional push-forward neural networks for conditional density estimation.

A network phi(x, u) is trained so that phi(x, U), with U a fixed latent
distribution, is distributed approximately like Y given X = x.  The package
also ships a kernel conditional density baseline, Wasserstein-based
accuracy measures and two synthetic processes with exact conditional laws.
"""
from .data import Dataset, FoldSplit, ingest_csv, kfold_split, write_csv
from .errors import (AcceptanceStall, BudgetExceeded, ConfigError, CorruptModel, CPFNError, DataError,
                     DegenerateColumnWarning, DimensionMismatch, EmptyDataset, EmptyNeighborhood,
                     InvalidConfig, InvalidTau, NonFiniteLoss, NonFiniteValue, NumericalError,
                     ParseError, SingularOrigin, SizeMismatch)
from .harness import EvalConfig, RunConfig, kfold_nll, load_run_config, run_replicate, run_sim_study
from .inference import (conditional_density, conditional_quantile, conditional_statistics,
                        sample_conditional)
from .kcde import KCDEModel, accept_reject, kcde_density, kcde_fit, kcde_fmax, kcde_sample_ar
from .kernels import Bandwidth, KernelSpec, kernel_eval, scaled_kernel_eval
from .metrics import (EvalReport, TransportPlan, aqe, awd_multivariate, awd_univariate, nll,
                      w1_assignment, w1_sorted_1d)
from .model import (CPFNModel, NetworkArchitecture, Standardization, cpfn_forward, init_model,
                    load_model, save_model)
from .simulators import (RingBlobsProcess, UnivariateProcess, gen_multivariate, gen_univariate,
                         sample_true_conditional, true_multivariate_density, true_univariate_density,
                         true_univariate_quantile)
from .training import (AdamState, ModelConfig, TrainConfig, TrainingTrace, adam_step, cpfn_loss,
                       gradient_check, loss_gradient, standardize_fit, train)

__version__ = "0.1.0"

__all__ = [
    "Dataset", "FoldSplit", "ingest_csv", "kfold_split", "write_csv", "AcceptanceStall",
    "BudgetExceeded", "ConfigError", "CorruptModel", "CPFNError", "DataError",
    "DegenerateColumnWarning", "DimensionMismatch", "EmptyDataset", "EmptyNeighborhood",
    "InvalidConfig", "InvalidTau", "NonFiniteLoss", "NonFiniteValue", "NumericalError",
    "ParseError", "SingularOrigin", "SizeMismatch", "EvalConfig", "RunConfig", "kfold_nll",
    "load_run_config", "run_replicate", "run_sim_study", "conditional_density", "conditional_quantile",
    "conditional_statistics", "sample_conditional", "KCDEModel", "accept_reject", "kcde_density",
    "kcde_fit", "kcde_fmax", "kcde_sample_ar", "Bandwidth", "KernelSpec", "kernel_eval",
    "scaled_kernel_eval", "EvalReport", "TransportPlan", "aqe", "awd_multivariate",
    "awd_univariate", "nll", "w1_assignment", "w1_sorted_1d", "CPFNModel", "NetworkArchitecture",
    "Standardization", "cpfn_forward", "init_model", "load_model", "save_model",
    "RingBlobsProcess", "UnivariateProcess", "gen_multivariate", "gen_univariate",
    "sample_true_conditional", "true_multivariate_density", "true_univariate_density",
    "true_univariate_quantile", "AdamState", "ModelConfig", "TrainConfig", "TrainingTrace",
    "adam_step", "cpfn_loss", "gradient_check", "loss_gradient", "standardize_fit", "train",
]
