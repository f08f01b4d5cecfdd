from .tape import Tape, Var, NonFiniteError, UsageError
from .dual import DualScalar, Dual2Scalar, primal, tangent_of
from .functional import jvp, gradient, hessian, backward, grad_and_hessian_entries
from . import ops

__all__ = [
    "Tape", "Var", "NonFiniteError", "UsageError",
    "DualScalar", "Dual2Scalar", "primal", "tangent_of",
    "jvp", "gradient", "hessian", "backward", "grad_and_hessian_entries",
    "ops",
]
