from .autodiff import (
    Tensor,
    add,
    exp,
    log,
    neg,
    affine,
    attention,
    concat_rows,
    cross_entropy,
    cross_entropy_rows,
    gather_rows,
    log_softmax_rows,
    logsumexp_masked,
    matmul,
    mean,
    mul,
    query_bias_matrix,
    sigmoid,
    slice_rows,
    softmax_rowwise,
    softplus,
    take_per_row,
    tanh,
    tensor_sum,
    transpose,
)
from .checkpoint import load_params, save_params
from .gradcheck import grad_check, max_rel_err
from .optim import AdamW, OptimizerConfig

__all__ = [
    "AdamW",
    "OptimizerConfig",
    "Tensor",
    "add",
    "exp",
    "log",
    "neg",
    "affine",
    "attention",
    "concat_rows",
    "cross_entropy",
    "cross_entropy_rows",
    "gather_rows",
    "grad_check",
    "load_params",
    "log_softmax_rows",
    "logsumexp_masked",
    "matmul",
    "max_rel_err",
    "mean",
    "mul",
    "query_bias_matrix",
    "save_params",
    "sigmoid",
    "slice_rows",
    "softmax_rowwise",
    "softplus",
    "take_per_row",
    "tanh",
    "tensor_sum",
    "transpose",
]
