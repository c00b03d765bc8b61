"""Dense numerical kernels shared by the rest of the package."""
from . import autodiff
from .autodiff import Var, backward, const, grads_of, param
from .cluster import kmeans, wcss
from .gradcheck import EvaluationError, grad_check
from .linalg import ContractError, jacobi_eigh, sym_eigs

__all__ = [
    "autodiff", "Var", "backward", "const", "grads_of", "param",
    "kmeans", "wcss", "grad_check", "EvaluationError",
    "ContractError", "jacobi_eigh", "sym_eigs",
]
