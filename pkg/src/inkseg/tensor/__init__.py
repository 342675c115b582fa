from .autograd import (Parameter, Tensor, add, backward, concat, dropout, embedding_lookup,
                       expand, gather_time, gelu, index, layer_norm, log_softmax, lstm_scan,
                       masked_fill, matmul, mean, mul, no_grad, relu, reshape, sigmoid, softmax,
                       sub, sum, swapaxes, tanh, tensor, transpose)
from .checkpoint import load_checkpoint, save_checkpoint

__all__ = [
    "Parameter", "Tensor", "add", "backward", "concat", "dropout", "embedding_lookup", "expand",
    "gather_time", "gelu", "index", "layer_norm", "log_softmax", "lstm_scan", "masked_fill",
    "matmul", "mean", "mul", "no_grad", "relu", "reshape", "sigmoid", "softmax", "sub", "sum",
    "swapaxes", "tanh", "tensor", "transpose", "load_checkpoint", "save_checkpoint",
]
