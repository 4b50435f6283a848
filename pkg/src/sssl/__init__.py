"""Semi-supervised regression on the top eigenfunctions of a kernel Gram matrix."""

from .diagnostics import assumption_report, eigengap, fit_power_law, recommended_s, required_labels, tau_n
from .eigensystem import EigenSystem, RankDeficientError, eigenfunction_values, top_eigenpairs
from .kernels import Dataset, KernelSpec, cross_gram, gram_matrix, kernel_matrix
from .models import fit_krr, fit_laprls, fit_sssl, predict_sssl, regression_error

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "EigenSystem",
    "KernelSpec",
    "RankDeficientError",
    "assumption_report",
    "cross_gram",
    "eigenfunction_values",
    "eigengap",
    "fit_krr",
    "fit_laprls",
    "fit_power_law",
    "fit_sssl",
    "gram_matrix",
    "kernel_matrix",
    "predict_sssl",
    "recommended_s",
    "regression_error",
    "required_labels",
    "tau_n",
    "top_eigenpairs",
]
