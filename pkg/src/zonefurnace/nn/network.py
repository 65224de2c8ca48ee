"""Multi-layer perceptron, Adam and checkpoint files."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T

DEFAULT_HIDDEN = (50, 100, 200)


def _act_numpy(name, v):
    return T.ACTIVATIONS[name](T.Tensor(v)).value


@dataclass(eq=False)
class Mlp:
    widths: tuple  # (in, h1, ..., out)
    activation: str = "relu"
    seed: int = 0
    params: list = field(default_factory=list)  # [W1, b1, W2, b2, ...] as Tensors

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        if len(self.widths) < 2 or min(self.widths) < 1:
            raise ValueError(f"bad layer widths {self.widths}")
        if self.activation not in T.ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if not self.params:
            rng = np.random.default_rng(self.seed)
            for fan_in, fan_out in zip(self.widths[:-1], self.widths[1:]):
                bound = np.sqrt(6.0 / fan_in)
                self.params.append(T.Tensor(rng.uniform(-bound, bound, (fan_in, fan_out)), requires_grad=True))
                self.params.append(T.Tensor(np.zeros(fan_out), requires_grad=True))
        self._check_shapes()

    @classmethod
    def build(cls, n_in: int, n_out: int, hidden=DEFAULT_HIDDEN, activation="relu", seed=0) -> "Mlp":
        return cls((n_in, *hidden, n_out), activation, seed)

    def _check_shapes(self):
        if len(self.params) != 2 * (len(self.widths) - 1):
            raise ValueError("parameter count does not match the layer widths")
        for i, (a, b) in enumerate(zip(self.widths[:-1], self.widths[1:])):
            if self.params[2 * i].shape != (a, b) or self.params[2 * i + 1].shape != (b,):
                raise ValueError(f"layer {i} parameters have the wrong shape")

    @property
    def n_params(self) -> int:
        return sum(p.value.size for p in self.params)

    def forward(self, X) -> T.Tensor:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.widths[0]:
            raise ValueError(f"input width {X.shape[-1]} differs from {self.widths[0]}")
        act = T.ACTIVATIONS[self.activation]
        h = T.Tensor(X)
        n_layers = len(self.widths) - 1
        for i in range(n_layers):
            h = h @ self.params[2 * i] + self.params[2 * i + 1]
            if i < n_layers - 1:
                h = act(h)
        return h

    def predict(self, X) -> np.ndarray:
        """Forward pass without building a graph; bitwise equal to ``forward``."""
        h = np.asarray(X, dtype=float)
        if h.ndim == 1:
            return self.predict(h[None, :])[0]
        n_layers = len(self.widths) - 1
        for i in range(n_layers):
            h = h @ self.params[2 * i].value + self.params[2 * i + 1].value
            if i < n_layers - 1:
                h = _act_numpy(self.activation, h)
        return h

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def flat(self) -> np.ndarray:
        return np.concatenate([p.value.ravel() for p in self.params])

    def set_flat(self, v) -> None:
        off = 0
        for p in self.params:
            n = p.value.size
            p.value = np.asarray(v[off:off + n], dtype=float).reshape(p.shape).copy()
            off += n

    def copy(self) -> "Mlp":
        return Mlp(self.widths, self.activation, self.seed,
                   [T.Tensor(p.value.copy(), requires_grad=True) for p in self.params])


@dataclass
class Adam:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def step(self, params: list) -> None:
        if not self.m:
            self.m = [np.zeros_like(p.value) for p in params]
            self.v = [np.zeros_like(p.value) for p in params]
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, m, v in zip(params, self.m, self.v):
            g = p.grad
            if g is None:
                continue
            if g.shape != p.value.shape:
                raise ValueError("gradient shape differs from parameter shape")
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.value = p.value - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def adam_step(params: list, state: Adam) -> None:
    state.step(params)


def save_checkpoint(path, mlp: Mlp, meta: dict | None = None) -> None:
    header = {"widths": list(mlp.widths), "activation": mlp.activation, "seed": mlp.seed,
              "shapes": [list(p.shape) for p in mlp.params], "meta": meta or {}}
    hb = json.dumps(header, sort_keys=True).encode()
    blob = mlp.flat().astype("<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(hb)) + hb + blob)


def load_checkpoint(path) -> tuple[Mlp, dict]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 8:
        raise ValueError(f"{path}: truncated checkpoint")
    (n,) = struct.unpack_from("<Q", raw)
    header = json.loads(raw[8:8 + n].decode())
    flat = np.frombuffer(raw[8 + n:], dtype="<f8")
    mlp = Mlp(header["widths"], header["activation"], header["seed"])
    if flat.size != mlp.n_params:
        raise ValueError(f"{path}: parameter blob has {flat.size} values, expected {mlp.n_params}")
    mlp.set_flat(flat)
    return mlp, header["meta"]


def gradient_check(f, params: list, h: float = 1e-5) -> float:
    """Max relative error between backprop gradients of scalar ``f()`` and central differences."""
    for p in params:
        p.grad = None
    loss = f()
    T.backward(loss)
    worst = 0.0
    for p in params:
        g = p.grad if p.grad is not None else np.zeros_like(p.value)
        flat = p.value.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            p.value = flat.reshape(p.shape)
            up = float(f().value)
            flat[i] = orig - h
            p.value = flat.reshape(p.shape)
            dn = float(f().value)
            flat[i] = orig
            p.value = flat.reshape(p.shape)
            num = (up - dn) / (2 * h)
            ana = g.ravel()[i]
            worst = max(worst, abs(num - ana) / max(abs(num), abs(ana), 1e-8))
    return worst
