"""Layer modules built on the autograd tape: affine, two-layer scorers,
LSTM cell + bidirectional runner, and a graph-convolution layer.

Every module exposes parameters() for the optimizer and checkpointing, and
takes an explicit np.random.Generator so construction is seed-deterministic.
"""

from __future__ import annotations

import numpy as np

from . import autograd as ag
from .autograd import Parameter, Tensor


def glorot(rng: np.random.Generator, shape, fan_in: int, fan_out: int, dtype=None):
    bound = float(np.sqrt(6.0 / (fan_in + fan_out)))
    arr = rng.uniform(-bound, bound, size=shape)
    return arr.astype(dtype or ag.DEFAULT_DTYPE)


def affine(x, w, b):
    return ag.add(ag.matmul(w, x), b)


class Linear:
    def __init__(self, in_dim: int, out_dim: int, rng, name: str, dtype=None):
        self.w = Parameter(glorot(rng, (out_dim, in_dim), in_dim, out_dim, dtype), f"{name}.w")
        self.b = Parameter(np.zeros((out_dim, 1), dtype=dtype or ag.DEFAULT_DTYPE), f"{name}.b")

    def __call__(self, x):
        return affine(x, self.w, self.b)

    def parameters(self):
        return [self.w, self.b]


class TwoLayerScorer:
    """sigmoid(W2 · relu(W1 x + b1) + b2); shared shape for the context
    linker scorer, the selective gate, and the relation prediction head."""

    def __init__(self, in_dim: int, hidden_dim: int, out_dim: int, rng, name: str, dtype=None):
        self.l1 = Linear(in_dim, hidden_dim, rng, f"{name}.l1", dtype)
        self.l2 = Linear(hidden_dim, out_dim, rng, f"{name}.l2", dtype)

    def __call__(self, x):
        return ag.sigmoid(self.l2(ag.relu(self.l1(x))))

    def parameters(self):
        return self.l1.parameters() + self.l2.parameters()


class LSTMCell:
    def __init__(self, in_dim: int, hidden_dim: int, rng, name: str, dtype=None):
        self.hidden_dim = hidden_dim
        dt = dtype or ag.DEFAULT_DTYPE
        self.wx = Parameter(glorot(rng, (4 * hidden_dim, in_dim), in_dim, hidden_dim, dtype), f"{name}.wx")
        self.wh = Parameter(glorot(rng, (4 * hidden_dim, hidden_dim), hidden_dim, hidden_dim, dtype), f"{name}.wh")
        bias = np.zeros((4 * hidden_dim, 1), dtype=dt)
        bias[hidden_dim:2 * hidden_dim] = 1.0  # forget gate open at start
        self.b = Parameter(bias, f"{name}.b")

    def __call__(self, x, h, c):
        hd = self.hidden_dim
        gates = ag.add(ag.add(ag.matmul(self.wx, x), ag.matmul(self.wh, h)), self.b)
        i = ag.sigmoid(ag.narrow(gates, 0, 0, hd))
        f = ag.sigmoid(ag.narrow(gates, 0, hd, hd))
        g = ag.tanh(ag.narrow(gates, 0, 2 * hd, hd))
        o = ag.sigmoid(ag.narrow(gates, 0, 3 * hd, hd))
        c_next = ag.add(ag.mul(f, c), ag.mul(i, g))
        h_next = ag.mul(o, ag.tanh(c_next))
        return h_next, c_next

    def parameters(self):
        return [self.wx, self.wh, self.b]


class BiLSTM:
    """Runs both directions over the columns of a (d_in, n) tensor. Output
    is (2*hidden, n); final_states() of the last run gives the concatenated
    last forward / last backward hidden state as a (2*hidden, 1) column."""

    def __init__(self, in_dim: int, hidden_dim: int, rng, name: str, dtype=None):
        self.in_dim = in_dim
        self.hidden_dim = hidden_dim
        self.dtype = dtype or ag.DEFAULT_DTYPE
        self.fwd = LSTMCell(in_dim, hidden_dim, rng, f"{name}.fwd", dtype)
        self.bwd = LSTMCell(in_dim, hidden_dim, rng, f"{name}.bwd", dtype)

    def _run_direction(self, cols, cell):
        zeros = np.zeros((self.hidden_dim, 1), dtype=self.dtype)
        h, c = Tensor(zeros), Tensor(zeros)
        states = []
        for x in cols:
            h, c = cell(x, h, c)
            states.append(h)
        return states

    def __call__(self, x):
        n = x.shape[1]
        cols = [ag.narrow(x, 1, t, 1) for t in range(n)]
        f_states = self._run_direction(cols, self.fwd)
        b_states = self._run_direction(list(reversed(cols)), self.bwd)
        b_states.reverse()
        self._last_final = ag.concat([f_states[-1], b_states[0]], axis=0)
        per_token = [ag.concat([f_states[t], b_states[t]], axis=0) for t in range(n)]
        return ag.concat(per_token, axis=1)

    def final_states(self):
        return self._last_final

    def parameters(self):
        return self.fwd.parameters() + self.bwd.parameters()


class GCNLayer:
    """h_i = relu(sum_j A_hat[i,j] * W h_j + b) over node columns; A_hat is
    expected symmetric (normalized adjacency with self-loops)."""

    def __init__(self, dim: int, rng, name: str, dtype=None):
        self.lin = Linear(dim, dim, rng, name, dtype)

    def __call__(self, h, a_hat):
        if a_hat.shape[0] != h.shape[1]:
            raise ValueError(f"adjacency {a_hat.shape} does not match {h.shape[1]} nodes")
        mixed = ag.matmul(ag.matmul(self.lin.w, h), Tensor(a_hat))
        return ag.relu(ag.add(mixed, self.lin.b))

    def parameters(self):
        return self.lin.parameters()
