"""Named parameter storage with stable iteration order."""
from __future__ import annotations

import numpy as np

from ..errors import ContractError
from .tensor import Tensor


class ParamStore:
    """Learnable tensors keyed by dotted names, plus fixed (non-learned) buffers."""

    def __init__(self, dtype=np.float64):
        self.dtype = np.dtype(dtype)
        self._params: dict[str, Tensor] = {}
        self.buffers: dict[str, np.ndarray] = {}

    def add(self, name: str, value) -> Tensor:
        if name in self._params:
            raise ContractError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, dtype=self.dtype), requires_grad=True)
        self._params[name] = t
        return t

    def add_buffer(self, name: str, value) -> np.ndarray:
        if name in self.buffers:
            raise ContractError(f"duplicate buffer name {name!r}")
        self.buffers[name] = np.array(value, dtype=self.dtype)
        return self.buffers[name]

    def __getitem__(self, name) -> Tensor:
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __iter__(self):
        return iter(self._params)

    def __len__(self):
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self, prefix: str = "") -> list[str]:
        return [n for n in self._params if n.startswith(prefix)]

    def count(self, prefix: str = "") -> int:
        """Number of learnable scalars whose name starts with ``prefix``."""
        return int(sum(self._params[n].data.size for n in self.names(prefix)))

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None

    def grad_of(self, name) -> np.ndarray:
        t = self._params[name]
        return np.zeros_like(t.data) if t.grad is None else t.grad

    def state(self) -> dict[str, np.ndarray]:
        out = {n: t.data.copy() for n, t in self._params.items()}
        out.update({f"buffer:{n}": b.copy() for n, b in self.buffers.items()})
        return out

    def load_state(self, state: dict):
        for n, t in self._params.items():
            if n not in state:
                raise ContractError(f"state is missing parameter {n!r}")
            v = np.asarray(state[n], dtype=self.dtype)
            if v.shape != t.data.shape:
                raise ContractError(f"parameter {n!r}: shape {v.shape} != {t.data.shape}")
            t.data = v.copy()
        for n, b in self.buffers.items():
            key = f"buffer:{n}"
            if key in state:
                v = np.asarray(state[key], dtype=self.dtype)
                if v.shape != b.shape:
                    raise ContractError(f"buffer {n!r}: shape {v.shape} != {b.shape}")
                self.buffers[n] = v.copy()

    def astype(self, dtype) -> "ParamStore":
        out = ParamStore(dtype)
        for n, t in self._params.items():
            out.add(n, t.data)
        for n, b in self.buffers.items():
            out.add_buffer(n, b)
        return out
