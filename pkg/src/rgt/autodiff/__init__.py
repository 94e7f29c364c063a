from .tensor import (GraphError, Tensor, add, as_tensor, backward, broadcast_to, clip, concat, div,
                     exp, getitem, log, matmul, mean, mul, no_grad, power, reshape, sigmoid, sin,
                     sqrt, stack, sub, swapaxes, tanh, transpose, tsum)
from .functional import (attention, bilinear_sample, clamp_points, dropout, embedding, gelu,
                         l2_normalize, layer_norm, linear, logsumexp, softmax)
from .gradcheck import grad_check, grad_check_report
from .nn import (MLP, EncoderBlock, LayerNorm, Linear, Module, ModuleList, MultiHeadAttention,
                 Parameter, trunc_normal)
from .optim import AdamW, cosine_with_warmup
