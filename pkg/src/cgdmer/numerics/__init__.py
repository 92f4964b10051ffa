from . import kernels
from .gradcheck import GradCheckResult, grad_check, grad_check_many
from .optim import OptimizerState, adamw_step, cosine_lr
from .tensor import (
    NonFiniteError,
    ShapeError,
    Tensor,
    add,
    as_tensor,
    backward,
    concat,
    conv1d,
    cosine_similarity,
    div,
    exp,
    gather_rows,
    gelu,
    getitem,
    group_norm,
    is_grad_enabled,
    l2_normalize,
    layer_norm,
    log,
    log_sigmoid,
    logsumexp,
    matmul,
    mean,
    mul,
    neg,
    no_grad,
    reshape,
    sigmoid,
    softmax,
    softmax_cross_entropy,
    sq_l2_distance,
    sqrt,
    square,
    sub,
    sum_,
    take,
    transpose,
)
