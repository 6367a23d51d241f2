from .gradcheck import GradCheckReport, grad_check
from .optim import Adam, Parameter, adam_step
from .tensor import (
    Tensor,
    add,
    as_tensor,
    concat,
    cosine_similarity,
    div,
    exp,
    gelu,
    getitem,
    hinge_neg,
    hinge_pos,
    layernorm,
    leaky_relu,
    log,
    matmul,
    max_over_positions,
    mean,
    mul,
    no_grad,
    power,
    relu,
    reshape,
    sigmoid,
    softmax,
    softplus,
    sqrt,
    sub,
    transpose,
    tsum,
)
