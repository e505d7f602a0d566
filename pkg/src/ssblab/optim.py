"""Named parameter store with Adam state and a bit-exact checkpoint format.

Checkpoints are numpy ``.npz`` containers: one ``param/<name>`` entry per
parameter (float64, shape preserved, little-endian on disk per the npy
format), matching ``adam_m/<name>`` / ``adam_v/<name>`` moment buffers, an
``adam_t`` step-count vector, and an optional JSON header under
``__header__``.  Loading restores every byte.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .tape import Value

__all__ = ["ParameterStore", "adam_step", "save_checkpoint", "load_checkpoint"]


class ParameterStore:
    """Uniquely named parameters plus per-parameter Adam moments.

    Safe to read concurrently between steps; mutation happens only inside
    :func:`adam_step`.
    """

    def __init__(self) -> None:
        self._params: dict[str, Value] = {}
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self._t: dict[str, int] = {}

    def create(self, name: str, data: np.ndarray) -> Value:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        val = Value(np.asarray(data, dtype=np.float64))
        self._params[name] = val
        self._m[name] = np.zeros_like(val.data)
        self._v[name] = np.zeros_like(val.data)
        self._t[name] = 0
        return val

    def __getitem__(self, name: str) -> Value:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self) -> list[str]:
        return sorted(self._params)

    def zero_grads(self) -> None:
        for v in self._params.values():
            v.zero_grad()

    def n_scalars(self) -> int:
        return sum(v.size for v in self._params.values())


def adam_step(store: ParameterStore, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> None:
    """Bias-corrected Adam update over every parameter; zeroes grads after."""
    for name in store.names():
        if name not in store._m:
            raise KeyError(f"missing Adam state for parameter {name!r}")
        p = store._params[name]
        g = p.grad
        store._t[name] += 1
        t = store._t[name]
        m = store._m[name]
        v = store._v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        p.data -= lr * m_hat / (np.sqrt(v_hat) + eps)
        p.grad.fill(0.0)


def save_checkpoint(store: ParameterStore, path: str | Path,
                    header: dict | None = None) -> None:
    arrays: dict[str, np.ndarray] = {}
    names = store.names()
    for name in names:
        arrays[f"param/{name}"] = store._params[name].data
        arrays[f"adam_m/{name}"] = store._m[name]
        arrays[f"adam_v/{name}"] = store._v[name]
    arrays["adam_t"] = np.array([store._t[n] for n in names], dtype=np.int64)
    arrays["__header__"] = np.frombuffer(
        json.dumps(header or {}, sort_keys=True).encode(), dtype=np.uint8)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path: str | Path) -> tuple[ParameterStore, dict]:
    store = ParameterStore()
    with np.load(Path(path)) as blob:
        header = json.loads(bytes(blob["__header__"]).decode() or "{}")
        names = sorted(k[len("param/"):] for k in blob.files if k.startswith("param/"))
        steps = blob["adam_t"]
        for i, name in enumerate(names):
            store.create(name, blob[f"param/{name}"])
            store._m[name] = blob[f"adam_m/{name}"].astype(np.float64, copy=True)
            store._v[name] = blob[f"adam_v/{name}"].astype(np.float64, copy=True)
            store._t[name] = int(steps[i])
    return store, header
