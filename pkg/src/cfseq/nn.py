"""Sequence-model building blocks on top of the autodiff core.

All parameters live in flat ``dict[str, Tensor]`` maps keyed by
``<prefix><name>``, which keeps checkpointing and the optimizer trivial.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad

V_MAX = 1150.0  # cm^3; outcome normalization constant


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_lstm(params: dict, prefix: str, input_size: int, hidden: int,
              rng: np.random.Generator) -> None:
    params[f"{prefix}Wx"] = ad.parameter(glorot(rng, input_size, 4 * hidden))
    params[f"{prefix}Wh"] = ad.parameter(glorot(rng, hidden, 4 * hidden))
    b = np.zeros(4 * hidden)
    b[hidden:2 * hidden] = 1.0  # forget-gate bias
    params[f"{prefix}b"] = ad.parameter(b)


def lstm_step(params: dict, prefix: str, x: ad.Tensor, h: ad.Tensor, c: ad.Tensor,
              hidden: int, rec_mask: ad.Tensor | None = None):
    """One LSTM step; ``rec_mask`` is a per-sequence variational dropout mask
    applied to the recurrent connection."""
    h_in = ad.mul(h, rec_mask) if rec_mask is not None else h
    z = ad.add(ad.add(ad.matmul(x, params[f"{prefix}Wx"]),
                      ad.matmul(h_in, params[f"{prefix}Wh"])),
               params[f"{prefix}b"])
    i = ad.sigmoid(ad.narrow(z, 1, 0, hidden))
    f = ad.sigmoid(ad.narrow(z, 1, hidden, hidden))
    g = ad.tanh(ad.narrow(z, 1, 2 * hidden, hidden))
    o = ad.sigmoid(ad.narrow(z, 1, 3 * hidden, hidden))
    c_new = ad.add(ad.mul(f, c), ad.mul(i, g))
    h_new = ad.mul(o, ad.tanh(c_new))
    return h_new, c_new


def init_dense(params: dict, name: str, fan_in: int, fan_out: int,
               rng: np.random.Generator) -> None:
    params[f"{name}W"] = ad.parameter(glorot(rng, fan_in, fan_out))
    params[f"{name}b"] = ad.parameter(np.zeros(fan_out))


def dense(params: dict, name: str, x: ad.Tensor) -> ad.Tensor:
    return ad.add(ad.matmul(x, params[f"{name}W"]), params[f"{name}b"])


def elu_dense(params: dict, name: str, x: ad.Tensor) -> ad.Tensor:
    return ad.elu(dense(params, name, x))


def mlp_head(params: dict, prefix: str, x: ad.Tensor) -> ad.Tensor:
    """One ELU hidden layer followed by a linear output layer."""
    return dense(params, f"{prefix}out_", elu_dense(params, f"{prefix}hid_", x))


def init_mlp_head(params: dict, prefix: str, fan_in: int, hidden: int,
                  fan_out: int, rng: np.random.Generator) -> None:
    init_dense(params, f"{prefix}hid_", fan_in, hidden, rng)
    init_dense(params, f"{prefix}out_", hidden, fan_out, rng)


def cross_entropy(logits: ad.Tensor, onehot: np.ndarray,
                  weights: np.ndarray) -> ad.Tensor:
    """Weighted sum of per-row cross-entropies (one-hot targets)."""
    return ad.scale(ad.masked_sum(ad.log_softmax(logits),
                                  onehot * weights[:, None]), -1.0)


def squared_error(pred: ad.Tensor, target: np.ndarray,
                  weights: np.ndarray) -> ad.Tensor:
    """Weighted sum of squared errors; pred has shape (n, 1)."""
    diff = ad.sub(pred, ad.constant(target.reshape(-1, 1)))
    return ad.masked_sum(ad.square(diff), weights.reshape(-1, 1))


def softmax_probs(logits: np.ndarray) -> np.ndarray:
    """Plain numpy row softmax, for inference paths outside the tape."""
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def onehot(labels: np.ndarray, n: int) -> np.ndarray:
    out = np.zeros((len(labels), n))
    out[np.arange(len(labels)), labels] = 1.0
    return out
