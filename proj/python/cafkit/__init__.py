"""Linear cross-attention fusion, distillation loss and image rearrangement kernels."""

from ._cafkit import (
    ConfigError,
    Error,
    FormatError,
    InvalidInputError,
    ParseError,
    ShapeError,
    adaptive_encode,
    area_resize,
    attention_weights,
    caf_linear,
    caf_reference,
    check_grads,
    distill_loss,
    finite_diff_grad,
    fuse,
    inverse_pixel_shuffle,
    kl_term,
    mtl_loss,
    multi_head_caf,
    nll_term,
    parse_teacher_trace,
    pixel_shuffle,
    verify,
)

__version__ = "0.1.0"
