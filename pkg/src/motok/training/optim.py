from __future__ import annotations

from collections import OrderedDict

import numpy as np

from ..errors import DimensionError, NumericError, UsageError


class AdamW:
    """Adam with decoupled weight decay and bias-corrected moments.

    Moments live in the dtype of each parameter so float64 parameters are
    updated in float64 and float32 training stays float32 end to end.
    """

    def __init__(self, lr: float = 1e-4, betas=(0.9, 0.99), eps: float = 1e-8, weight_decay: float = 1e-4):
        if lr <= 0:
            raise UsageError("learning rate must be positive")
        self.lr = float(lr)
        self.betas = (float(betas[0]), float(betas[1]))
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self.t = 0
        self.m: "OrderedDict[str, np.ndarray]" = OrderedDict()
        self.v: "OrderedDict[str, np.ndarray]" = OrderedDict()

    def step(self, params, grads, lr: float | None = None) -> None:
        """Update ``params`` (name -> Tensor or ndarray) in place."""
        lr = self.lr if lr is None else float(lr)
        for name, g in grads.items():
            if g is not None and not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient for parameter {name!r}")
        self.t += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for name, p in params.items():
            data = p.data if not isinstance(p, np.ndarray) else p
            g = grads.get(name)
            if g is None:
                g = np.zeros_like(data)
            if g.shape != data.shape:
                raise DimensionError(f"gradient for {name!r} has shape {g.shape}, parameter {data.shape}")
            dt = data.dtype.type
            if name not in self.m:
                self.m[name] = np.zeros_like(data)
                self.v[name] = np.zeros_like(data)
            m, v = self.m[name], self.v[name]
            m *= dt(b1)
            m += dt(1.0 - b1) * g
            v *= dt(b2)
            v += dt(1.0 - b2) * (g * g)
            if self.weight_decay:
                data *= dt(1.0 - lr * self.weight_decay)
            data -= dt(lr) * (m / dt(c1)) / (np.sqrt(v / dt(c2)) + dt(self.eps))

    def state_arrays(self) -> "OrderedDict[str, np.ndarray]":
        out: "OrderedDict[str, np.ndarray]" = OrderedDict()
        for name in self.m:
            out[f"adam.m.{name}"] = self.m[name]
            out[f"adam.v.{name}"] = self.v[name]
        return out

    def load_state(self, t: int, arrays) -> None:
        self.t = int(t)
        self.m.clear()
        self.v.clear()
        for key, arr in arrays.items():
            if key.startswith("adam.m."):
                self.m[key[len("adam.m."):]] = np.array(arr, copy=True)
            elif key.startswith("adam.v."):
                self.v[key[len("adam.v."):]] = np.array(arr, copy=True)


def adamw_step(params, grads, state: AdamW, lr: float | None = None) -> AdamW:
    state.step(params, grads, lr)
    return state
