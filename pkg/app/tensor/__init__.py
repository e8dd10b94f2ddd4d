from app.tensor.tensor import (
    Tensor,
    float64,
    finite_checks_enabled,
    get_default_dtype,
    make_node,
    set_default_dtype,
    set_finite_checks,
    track_breakpoints,
)
from app.tensor.gradcheck import GradCheckReport, gradcheck

__all__ = [
    "Tensor",
    "GradCheckReport",
    "float64",
    "finite_checks_enabled",
    "get_default_dtype",
    "gradcheck",
    "make_node",
    "set_default_dtype",
    "set_finite_checks",
    "track_breakpoints",
]
