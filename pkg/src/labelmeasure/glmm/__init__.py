"""Binomial GLMMs with crossed random intercepts (PIRLS + Laplace)."""
from .design import INTERCEPT, DesignMatrices, ModelSpec, build_design, design_from_arrays
from .fit import Coefficient, FitResult, VarianceComponent, fit, fit_design, optimize_theta
from .pirls import PirlsResult, glm_loglik, laplace_loglik, pdev_gradient_fd, pirls
from .quadrature import quadrature_oracle
from .summary import models_table, stars, summarize

__all__ = [
    "INTERCEPT", "DesignMatrices", "ModelSpec", "build_design", "design_from_arrays",
    "Coefficient", "FitResult", "VarianceComponent", "fit", "fit_design", "optimize_theta",
    "PirlsResult", "glm_loglik", "laplace_loglik", "pdev_gradient_fd", "pirls",
    "quadrature_oracle", "models_table", "stars", "summarize",
]
