"""Backend selection for the per-cell kernels.

The compiled extension is used when it imports; set ``HJARANK_PURE_PYTHON=1``
to force the numpy implementation.
"""

import os

from . import _kernels_py as python_backend

compiled_backend = None
if os.environ.get("HJARANK_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as compiled_backend
    except ImportError:  # extension not built
        compiled_backend = None

backend = compiled_backend if compiled_backend is not None else python_backend
BACKEND = backend.BACKEND

linear_predictor = backend.linear_predictor
logistic_terms = backend.logistic_terms
nll_value = backend.nll_value
scatter_gradient = backend.scatter_gradient
judge_hessian = backend.judge_hessian
item_hessian = backend.item_hessian
eta_jacobian = backend.eta_jacobian
fisher = backend.fisher

__all__ = [
    "BACKEND", "backend", "compiled_backend", "python_backend", "linear_predictor",
    "logistic_terms", "nll_value", "scatter_gradient", "judge_hessian", "item_hessian",
    "eta_jacobian", "fisher",
]
