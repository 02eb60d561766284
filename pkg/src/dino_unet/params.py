"""Named parameter registry with per-entry trainable flags."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from .autodiff import Tensor
from .container import Entry


class ParamStore:
    """Ordered mapping ``name -> Tensor``; ``Tensor.requires_grad`` is the trainable flag."""

    def __init__(self, dtype=np.float64):
        self.dtype = np.dtype(dtype)
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, array: np.ndarray, trainable: bool = True) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(array, dtype=self.dtype), requires_grad=trainable, name=name)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self, prefix: str = "") -> list[str]:
        return [n for n in self._params if n.startswith(prefix)]

    def subset(self, prefix: str) -> dict[str, Tensor]:
        return {n: t for n, t in self._params.items() if n.startswith(prefix)}

    def trainable(self) -> list[Tensor]:
        return [t for t in self._params.values() if t.requires_grad]

    def frozen(self) -> list[Tensor]:
        return [t for t in self._params.values() if not t.requires_grad]

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def merge(self, other: "ParamStore") -> None:
        for name, t in other.items():
            if name in self._params:
                raise KeyError(f"duplicate parameter name {name!r}")
            self._params[name] = t

    def astype(self, dtype) -> "ParamStore":
        out = ParamStore(dtype)
        for name, t in self._params.items():
            out.add(name, t.data, trainable=t.requires_grad)
        return out

    def entries(self, prefix: str = "") -> list[Entry]:
        return [Entry(n, t.data, t.requires_grad) for n, t in self._params.items() if n.startswith(prefix)]

    def load_entries(self, entries, strict: bool = True) -> None:
        seen = set()
        for e in entries:
            if e.name not in self._params:
                if strict:
                    raise KeyError(f"unexpected parameter {e.name!r} in checkpoint")
                continue
            t = self._params[e.name]
            if t.shape != e.array.shape:
                raise ValueError(f"parameter {e.name!r}: shape {e.array.shape} != expected {t.shape}")
            t.data = np.array(e.array, dtype=self.dtype)
            t.requires_grad = e.trainable
            seen.add(e.name)
        missing = set(self._params) - seen
        if strict and missing:
            raise KeyError(f"checkpoint missing parameters: {sorted(missing)[:5]}")


def he_normal(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    """Kaiming normal, fan-in mode, rectifier gain sqrt(2)."""
    return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)


def lecun_normal(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    return rng.standard_normal(shape) * np.sqrt(1.0 / fan_in)
