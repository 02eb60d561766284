"""Central finite-difference checks of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import ops
from .autodiff import Tensor, backward


@dataclass
class GradcheckReport:
    name: str
    errors: dict[str, float] = field(default_factory=dict)
    tol: float = 1e-4

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return all(e <= self.tol for e in self.errors.values())

    def __str__(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{self.name}\t{status}\tmax_rel_err={self.max_error:.3e}"


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max|a - n| scaled by the larger of the two gradients' max magnitude."""
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0))
    diff = np.abs(analytic - numeric).max(initial=0.0)
    if scale == 0.0:
        return float(diff)
    return float(diff / scale)


def gradcheck(fn: Callable[..., Tensor], inputs: Sequence[Tensor], eps: float = 1e-4, tol: float = 1e-4,
              name: str = "fn", seed: int = 0, max_entries: int | None = None,
              input_names: Sequence[str] | None = None) -> GradcheckReport:
    """Compare backprop against central differences for every input that requires grad.

    A non-scalar output is reduced with a fixed random projection so every
    output element contributes. ``max_entries`` caps the number of probed
    coordinates per input (chosen at random) for large parameter tensors.
    """
    rng = np.random.default_rng(seed)
    for t in inputs:
        if t.dtype != np.float64:
            raise ValueError(f"gradcheck needs float64 inputs, got {t.dtype}")
    probe = None

    def scalar_out() -> Tensor:
        nonlocal probe
        out = fn(*inputs)
        if out.size == 1:
            return ops.reshape(out, ())
        if probe is None:
            probe = Tensor(rng.standard_normal(out.shape))
        return ops.sum(ops.mul(out, probe))

    for t in inputs:
        t.grad = None
    loss = scalar_out()
    backward(loss)

    names = list(input_names) if input_names is not None else [f"input{i}" for i in range(len(inputs))]
    report = GradcheckReport(name=name, tol=tol)
    for t, tname in zip(inputs, names):
        if not t.requires_grad:
            continue
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = rng.choice(flat.size, size=max_entries, replace=False)
        numeric = np.zeros(idx.size)
        for n, k in enumerate(idx):
            orig = flat[k]
            flat[k] = orig + eps
            fp = scalar_out().item()
            flat[k] = orig - eps
            fm = scalar_out().item()
            flat[k] = orig
            numeric[n] = (fp - fm) / (2 * eps)
        report.errors[tname] = relative_error(analytic.reshape(-1)[idx], numeric)
    return report
