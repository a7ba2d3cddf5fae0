"""Minimal tape-based reverse-mode differentiation."""
from .check import GradCheckReport, gradient_check, gradient_check_report
from .ops import (
    ShapeError,
    add,
    ceinsum,
    clamp_min,
    cmatmul,
    complex_,
    concat,
    conj,
    div,
    einsum,
    exp,
    expand_vn,
    from_complex,
    getitem,
    imag,
    l2norm,
    matmul,
    mean,
    mul,
    real,
    reshape,
    scale,
    softmax,
    spmm,
    stack,
    sub,
    sum,
    tanh,
    to_complex,
    transpose,
)
from .special import diffusion, polar, ridge_solve
from .tensor import AutodiffError, Tape, Tensor, active_tape, as_tensor

__all__ = [
    "AutodiffError", "GradCheckReport", "ShapeError", "Tape", "Tensor", "active_tape", "add",
    "as_tensor", "ceinsum", "clamp_min", "cmatmul", "complex_", "concat", "conj", "diffusion", "div",
    "einsum", "exp", "expand_vn", "from_complex", "getitem", "gradient_check", "gradient_check_report",
    "imag", "l2norm", "matmul", "mean", "mul", "polar", "real", "reshape", "ridge_solve", "scale",
    "softmax", "spmm", "stack", "sub", "sum", "tanh", "to_complex", "transpose",
]
