from .tensor import (
    Tensor,
    ShapeError,
    no_grad,
    as_tensor,
    add,
    sub,
    mul,
    div,
    neg,
    power,
    exp,
    log,
    sqrt,
    relu,
    leaky_relu,
    sigmoid,
    softmax,
    tsum,
    tmean,
    reshape,
    transpose,
    concat,
    narrow,
    split,
    stack,
    matmul,
)
from .ops import conv2d, dwconv2d, maxpool2d, upsample_bilinear, batchnorm2d, mse, bce
from .surrogate import SurrogateSpec, heaviside
from .gradcheck import grad_check, GradCheckResult, OpCase, standard_op_cases
from .module import Module, ModuleList, Conv2d, DepthwiseConv2d, Linear, BatchNorm2d
from .checkpoint import save_arrays, load_arrays, CheckpointError
