"""Dynamic Gaussian splatting with spline motion curves."""

from ._core import (
    AmbiguousLogError,
    Dataset,
    Error,
    FormatError,
    InvalidCurveError,
    InvalidOrderError,
    Scene,
    ShapeError,
    StateError,
    basis_matrix,
    default_config,
    default_spec,
    eval_curve,
    evaluate,
    fit,
    grad_check,
    grad_check_components,
    init_scene,
    psnr,
    render,
    ssim,
    synthesize,
)

__all__ = [
    "AmbiguousLogError",
    "Dataset",
    "Error",
    "FormatError",
    "InvalidCurveError",
    "InvalidOrderError",
    "Scene",
    "ShapeError",
    "StateError",
    "basis_matrix",
    "default_config",
    "default_spec",
    "eval_curve",
    "evaluate",
    "fit",
    "grad_check",
    "grad_check_components",
    "init_scene",
    "psnr",
    "render",
    "ssim",
    "synthesize",
]
