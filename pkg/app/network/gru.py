import numpy as np

from app.network.params import ModelParams, add_linear
from app.tensor import Tensor
from app.tensor import ops
from app.utils.error import ShapeError


def init_gru(p: ModelParams, input_dim: int, hidden_dim: int, rng: np.random.Generator) -> None:
    # every gate reads the concatenation [h, x]
    for gate in ("z", "r", "n"):
        add_linear(p, gate, hidden_dim + input_dim, hidden_dim, rng)


def gru_cell(x_t: Tensor, h_prev: Tensor, p: ModelParams) -> Tensor:
    """
    One GRU update:

        z = sigmoid(W_z [h, x] + b_z)
        r = sigmoid(W_r [h, x] + b_r)
        n = tanh(W_n [r * h, x] + b_n)
        h_t = (1 - z) * n + z * h
    """
    if x_t.ndim != 1 or h_prev.ndim != 1:
        raise ShapeError(
            f"gru_cell expects vectors, got x {list(x_t.shape)} and h {list(h_prev.shape)}"
        )
    w_z = p["z.w"]
    hidden = h_prev.shape[0]
    if w_z.shape != (hidden + x_t.shape[0], hidden):
        raise ShapeError(
            f"gru_cell weights {list(w_z.shape)} do not fit input {x_t.shape[0]} and hidden {hidden}"
        )
    hx = ops.concat([h_prev, x_t], axis=0)
    z = ops.sigmoid(ops.linear(hx, w_z, p["z.b"]))
    r = ops.sigmoid(ops.linear(hx, p["r.w"], p["r.b"]))
    n = ops.tanh(ops.linear(ops.concat([r * h_prev, x_t], axis=0), p["n.w"], p["n.b"]))
    return (1.0 - z) * n + z * h_prev


def zero_state(hidden_dim: int) -> Tensor:
    return Tensor(np.zeros(hidden_dim))
