"""Small fully-connected Q-networks trained with Adam, no autodiff framework.

Two heads are supported: a plain MLP mapping state to one Q-value per
action, and a dueling net whose shared trunk feeds a scalar value stream and
an advantage stream combined by mean- or max-subtraction.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from . import kernels
from .env import N_ACTIONS


class DivergenceError(FloatingPointError):
    """Training produced a non-finite loss."""


def _build_layout(dims, offset):
    rows = []
    for n_in, n_out in zip(dims[:-1], dims[1:]):
        rows.append((offset, offset + n_in * n_out, n_in, n_out))
        offset += n_in * n_out + n_out
    return np.array(rows, dtype=np.int64).reshape(-1, 4), offset


class QNetwork:
    """Base class; parameters are one flat float64 vector ``theta``."""

    head = "plain"
    mode = kernels.PLAIN

    def __init__(self, trunk_dims, value_dims=(), advantage_dims=(), seed=0):
        self.trunk_dims = tuple(int(d) for d in trunk_dims)
        self.value_dims = tuple(int(d) for d in value_dims)
        self.advantage_dims = tuple(int(d) for d in advantage_dims)
        self.seed = int(seed)
        self.trunk, off = _build_layout(self.trunk_dims, 0)
        self.vstream, off = _build_layout(self.value_dims, off)
        self.astream, off = _build_layout(self.advantage_dims, off)
        self.theta = np.zeros(off)
        self.grad = np.zeros(off)
        self._init_params(np.random.default_rng(self.seed))

    def _init_params(self, rng):
        for layout in (self.trunk, self.vstream, self.astream):
            for wo, _, ni, no in layout:
                limit = np.sqrt(6.0 / (ni + no))
                self.theta[wo : wo + ni * no] = rng.uniform(-limit, limit, ni * no)

    @property
    def n_params(self) -> int:
        return self.theta.size

    @property
    def n_inputs(self) -> int:
        return self.trunk_dims[0]

    def architecture(self) -> dict:
        return {
            "head": self.head,
            "mode": int(self.mode),
            "trunk": list(self.trunk_dims),
            "value_stream": list(self.value_dims),
            "advantage_stream": list(self.advantage_dims),
        }

    def layer(self, stack: str, index: int):
        """Views ``(W, b)`` into ``theta`` for one dense layer of ``stack``."""
        wo, bo, ni, no = getattr(self, stack)[index]
        return self.theta[wo : wo + ni * no].reshape(ni, no), self.theta[bo : bo + no]

    def forward(self, x) -> np.ndarray:
        """Q-values for one state ``(d,)`` or a batch ``(n, d)``."""
        x = np.asarray(x, dtype=np.float64)
        if not np.all(np.isfinite(x)):
            raise ValueError("network input contains NaN or Inf")
        single = x.ndim == 1
        xb = np.ascontiguousarray(x.reshape(1, -1) if single else x)
        if xb.shape[1] != self.n_inputs:
            raise ValueError(f"expected {self.n_inputs} inputs, got {xb.shape[1]}")
        q = kernels.q_values(self.theta, self.trunk, self.vstream, self.astream, self.mode, xb)
        return q[0] if single else q

    __call__ = forward

    def streams(self, x):
        """``(V, A)`` before combination; dueling heads only."""
        if self.mode == kernels.PLAIN:
            raise TypeError("plain network has no value/advantage streams")
        xb = np.ascontiguousarray(np.atleast_2d(np.asarray(x, dtype=np.float64)))
        h = kernels.stack_forward(self.theta, self.trunk, xb, True)[-1]
        v = kernels.stack_forward(self.theta, self.vstream, h, False)[-1]
        a = kernels.stack_forward(self.theta, self.astream, h, False)[-1]
        return v[:, 0], a

    def loss_and_grad(self, x, actions, targets):
        x = np.ascontiguousarray(x, dtype=np.float64)
        actions = np.ascontiguousarray(actions, dtype=np.int64)
        targets = np.ascontiguousarray(targets, dtype=np.float64)
        loss = kernels.loss_and_grad(
            self.theta, self.grad, self.trunk, self.vstream, self.astream, self.mode, x, actions, targets
        )
        return float(loss), self.grad

    def copy(self) -> "QNetwork":
        other = object.__new__(type(self))
        other.__dict__.update(self.__dict__)
        other.theta = self.theta.copy()
        other.grad = np.zeros_like(self.grad)
        return other

    def same_architecture(self, other) -> bool:
        return type(self) is type(other) and self.architecture() == other.architecture()


class Mlp(QNetwork):
    """Plain Q-head: ReLU hidden layers, linear output of width ``n_actions``."""

    def __init__(self, hidden=(64, 64), n_inputs=3, n_actions=N_ACTIONS, seed=0):
        super().__init__((n_inputs, *hidden, n_actions), seed=seed)


class DuelingNet(QNetwork):
    """Shared ReLU trunk feeding a value stream (width 1) and an advantage stream."""

    head = "dueling"

    def __init__(self, hidden=(64, 64), stream_hidden=(32,), mode="mean", n_inputs=3, n_actions=N_ACTIONS, seed=0):
        if mode not in ("mean", "max"):
            raise ValueError(f"dueling mode must be 'mean' or 'max', got {mode!r}")
        self.mode = kernels.DUELING_MEAN if mode == "mean" else kernels.DUELING_MAX
        trunk = (n_inputs, *hidden)
        width = trunk[-1]
        super().__init__(trunk, (width, *stream_hidden, 1), (width, *stream_hidden, n_actions), seed=seed)

    @property
    def combine_mode(self) -> str:
        return "mean" if self.mode == kernels.DUELING_MEAN else "max"


def dueling_combine(v, a, mode="mean") -> np.ndarray:
    """Q = V + A - mean(A) (``mean``) or Q = V + A - max(A) (``max``)."""
    if mode not in ("mean", "max"):
        raise ValueError(f"unknown combine mode {mode!r}")
    a = np.asarray(a, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    ref = a.mean(axis=-1, keepdims=True) if mode == "mean" else a.max(axis=-1, keepdims=True)
    return v[..., None] + a - ref


class Adam:
    def __init__(self, n_params, learning_rate=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.learning_rate = float(learning_rate)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.m = np.zeros(n_params)
        self.v = np.zeros(n_params)
        self.t = 0

    @classmethod
    def for_net(cls, net: QNetwork, learning_rate=1e-3, **kw) -> "Adam":
        return cls(net.n_params, learning_rate, **kw)


def train_step(net: QNetwork, adam: Adam, inputs, actions, targets) -> float:
    """One Adam step on the batch MSE between ``targets`` and Q(s, a). Returns the pre-update loss."""
    inputs = np.ascontiguousarray(inputs, dtype=np.float64)
    actions = np.ascontiguousarray(actions, dtype=np.int64)
    targets = np.ascontiguousarray(targets, dtype=np.float64)
    if inputs.shape[0] == 0:
        raise ValueError("empty batch")
    if not np.all(np.isfinite(targets)):
        raise DivergenceError("non-finite TD targets")
    adam.t += 1
    loss = kernels.train_step(
        net.theta, net.grad, adam.m, adam.v, adam.t, adam.learning_rate, adam.beta1, adam.beta2, adam.eps,
        net.trunk, net.vstream, net.astream, net.mode, inputs, actions, targets,
    )
    if not np.isfinite(loss):
        raise DivergenceError(f"non-finite loss {loss!r}")
    return float(loss)


def gradient_check(net: QNetwork, x, action, target, n_samples=None, rng=None, step=1e-5, floor=1e-7) -> float:
    """Max relative error between backprop and central differences.

    Checks ``n_samples`` randomly chosen parameters (all of them if None).
    Relative error is ``|g - fd| / max(|g| + |fd|, floor)``.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    actions = np.atleast_1d(np.asarray(action, dtype=np.int64))
    targets = np.atleast_1d(np.asarray(target, dtype=np.float64))
    _, grad = net.loss_and_grad(x, actions, targets)
    analytic = grad.copy()
    if n_samples is None or n_samples >= net.n_params:
        idx = np.arange(net.n_params)
    else:
        rng = np.random.default_rng(rng)
        idx = rng.choice(net.n_params, size=n_samples, replace=False)
    worst = 0.0
    theta = net.theta
    for i in idx:
        old = theta[i]
        theta[i] = old + step
        up, _ = net.loss_and_grad(x, actions, targets)
        theta[i] = old - step
        down, _ = net.loss_and_grad(x, actions, targets)
        theta[i] = old
        fd = (up - down) / (2.0 * step)
        err = abs(analytic[i] - fd) / max(abs(analytic[i]) + abs(fd), floor)
        worst = max(worst, err)
    return worst


def sync_target(online: QNetwork, target: QNetwork):
    if not online.same_architecture(target):
        raise ValueError("cannot sync networks with different architectures")
    target.theta[:] = online.theta


_MAGIC = b"UAVQNET1"


def save(net: QNetwork, path):
    """Write ``net`` to ``path``.

    Layout: 8-byte magic ``UAVQNET1``, uint32 little-endian header length,
    UTF-8 JSON header (architecture, seed, parameter count), then the flat
    parameter vector as little-endian float64 in declaration order (trunk,
    value stream, advantage stream; per layer W row-major then b).
    """
    header = dict(net.architecture(), seed=net.seed, n_params=net.n_params)
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(net.theta.astype("<f8").tobytes())


def load(path) -> QNetwork:
    data = Path(path).read_bytes()
    if data[:8] != _MAGIC:
        raise ValueError(f"{path}: not a Q-network checkpoint")
    (hlen,) = struct.unpack("<I", data[8:12])
    header = json.loads(data[12 : 12 + hlen].decode())
    theta = np.frombuffer(data[12 + hlen :], dtype="<f8").astype(np.float64)
    if theta.size != header["n_params"]:
        raise ValueError(f"{path}: expected {header['n_params']} parameters, found {theta.size}")
    trunk = header["trunk"]
    if header["head"] == "plain":
        net = Mlp(hidden=trunk[1:-1], n_inputs=trunk[0], n_actions=trunk[-1], seed=header["seed"])
    else:
        adv = header["advantage_stream"]
        net = DuelingNet(
            hidden=trunk[1:],
            stream_hidden=adv[1:-1],
            mode="mean" if header["mode"] == kernels.DUELING_MEAN else "max",
            n_inputs=trunk[0],
            n_actions=adv[-1],
            seed=header["seed"],
        )
    if net.n_params != theta.size:
        raise ValueError(f"{path}: header does not match parameter count")
    net.theta[:] = theta
    return net
