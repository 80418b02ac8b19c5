from promo.nn.tensor import (
    GradientTape,
    Parameter,
    Tensor,
    add,
    concat,
    cross_entropy_logits,
    dropout,
    embedding,
    exp,
    gelu,
    gru_cell,
    l2_normalize,
    layer_norm,
    matmul,
    mean,
    mul,
    narrow,
    reshape,
    softmax,
    sub,
    sum_,
    swap_axes,
)
from promo.nn.layers import (
    BiGRU,
    Dropout,
    Embedding,
    GELU,
    LayerNorm,
    Linear,
    Module,
    MultiHeadAttention,
    Residual,
    Sequential,
    build_network,
    sinusoidal_embedding,
)
from promo.nn.optim import AdamW
from promo.nn.gradcheck import gradient_check

__all__ = [
    "AdamW",
    "BiGRU",
    "Dropout",
    "Embedding",
    "GELU",
    "GradientTape",
    "LayerNorm",
    "Linear",
    "Module",
    "MultiHeadAttention",
    "Parameter",
    "Residual",
    "Sequential",
    "Tensor",
    "add",
    "build_network",
    "concat",
    "cross_entropy_logits",
    "dropout",
    "embedding",
    "exp",
    "gelu",
    "gradient_check",
    "gru_cell",
    "l2_normalize",
    "layer_norm",
    "matmul",
    "mean",
    "mul",
    "narrow",
    "reshape",
    "sinusoidal_embedding",
    "softmax",
    "sub",
    "sum_",
    "swap_axes",
]
