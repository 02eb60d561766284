"""Adam with polynomial LR decay, the training loop, and checkpoints."""

from __future__ import annotations

import io
import logging
from dataclasses import dataclass, field

import numpy as np

from . import container
from .autodiff import Tensor, backward
from .config import ModelConfig, RunConfig, TrainConfig
from .container import Entry
from .data import SegSample
from .losses import total_loss
from .model import Model, build_model
from .params import ParamStore

log = logging.getLogger(__name__)

CONFIG_ENTRY = "__config__"


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, detail: str):
        super().__init__(f"training diverged at step {step}: {detail}")
        self.step = step


def poly_lr(step: int, total_steps: int, lr0: float, power: float = 0.9) -> float:
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    return lr0 * (1.0 - step / total_steps) ** power


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(params: ParamStore, state: AdamState, lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> None:
    """Bias-corrected Adam update of every trainable entry that has a gradient."""
    grads = {}
    for name, p in params.items():
        if not p.requires_grad or p.grad is None:
            continue
        if not np.all(np.isfinite(p.grad)):
            raise FloatingPointError(f"non-finite gradient in parameter {name!r}")
        grads[name] = p.grad
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    for name, g in grads.items():
        p = params[name]
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        step = (lr / bc1) * m / (np.sqrt(v / bc2) + eps)
        p.data -= step.astype(p.dtype)


def batch_stream(n: int, batch_size: int, seed: int):
    """Endless batches drawn from successive seeded permutations."""
    rng = np.random.default_rng([seed, 0x5A3])
    buf: list[int] = []
    while True:
        while len(buf) < batch_size:
            buf.extend(rng.permutation(n).tolist())
        yield buf[:batch_size]
        buf = buf[batch_size:]


def stack_batch(samples: list[SegSample], idx, dtype) -> tuple[np.ndarray, np.ndarray]:
    x = np.stack([samples[i].image for i in idx]).astype(dtype)
    y = np.stack([samples[i].mask for i in idx]).astype(np.int64)
    return x, y


@dataclass
class LossRecord:
    step: int
    lr: float
    dice: float
    ce: float
    total: float


@dataclass
class TrainResult:
    model: Model
    losses: list[LossRecord]

    def loss_log(self) -> str:
        return format_loss_log(self.losses)


def format_loss_log(records: list[LossRecord]) -> str:
    buf = io.StringIO()
    buf.write("step\tlr\tdice_loss\tce_loss\ttotal\n")
    for r in records:
        buf.write(f"{r.step}\t{r.lr!r}\t{r.dice!r}\t{r.ce!r}\t{r.total!r}\n")
    return buf.getvalue()


def train(model: Model, data: list[SegSample], cfg: TrainConfig, callback=None) -> TrainResult:
    """Supervised training on Dice + CE; the model is updated in place."""
    if not data:
        raise ValueError("training data is empty")
    cfg.validate()
    total = cfg.total_steps
    state = AdamState()
    batches = batch_stream(len(data), min(cfg.batch_size, len(data)), cfg.seed)
    records = []
    for step in range(total):
        x, y = stack_batch(data, next(batches), model.dtype)
        lr = poly_lr(step, total, cfg.lr0, cfg.poly_power)
        model.params.zero_grad()
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                logits = model.forward(Tensor(x))
                loss, dl, ce = total_loss(logits, y)
        except FloatingPointError as exc:
            raise TrainingDiverged(step, str(exc)) from None
        value = loss.item()
        if not np.isfinite(value):
            raise TrainingDiverged(step, f"loss={value}")
        with np.errstate(over="ignore", invalid="ignore"):
            backward(loss)
        try:
            adam_step(model.params, state, lr, cfg.beta1, cfg.beta2, cfg.eps)
        except FloatingPointError as exc:
            raise TrainingDiverged(step, str(exc)) from None
        rec = LossRecord(step, lr, dl.item(), ce.item(), value)
        records.append(rec)
        if callback is not None:
            callback(rec)
        if step % 50 == 0:
            log.debug("step %d lr %.3g loss %.4f", step, lr, value)
    model.params.zero_grad()
    return TrainResult(model, records)


# --------------------------------------------------------------------------- checkpoints

def checkpoint_entries(model: Model, train_cfg: TrainConfig | None = None) -> list[Entry]:
    run = RunConfig(model=model.cfg, train=train_cfg or TrainConfig())
    text = np.frombuffer(run.dumps().encode("utf-8"), dtype=np.uint8)
    return model.params.entries() + [Entry(CONFIG_ENTRY, text, False)]


def checkpoint_bytes(model: Model, train_cfg: TrainConfig | None = None) -> bytes:
    return container.to_bytes(checkpoint_entries(model, train_cfg))


def save_checkpoint(path, model: Model, train_cfg: TrainConfig | None = None) -> None:
    container.save(path, checkpoint_entries(model, train_cfg))


def load_checkpoint(path) -> tuple[Model, RunConfig]:
    entries = container.load(path)
    cfg_entries = [e for e in entries if e.name == CONFIG_ENTRY]
    if not cfg_entries:
        raise container.ContainerError(f"{path}: no {CONFIG_ENTRY} block")
    run = RunConfig.loads(cfg_entries[0].array.tobytes().decode("utf-8"))
    dtype = entries[0].array.dtype if entries else np.float64
    model = build_model(run.model, dtype=dtype)
    model.params.load_entries([e for e in entries if e.name != CONFIG_ENTRY])
    return model, run


def param_bytes(store: ParamStore, prefix: str) -> bytes:
    return container.to_bytes(store.entries(prefix))


def train_model(model_cfg: ModelConfig, data: list[SegSample], train_cfg: TrainConfig) -> TrainResult:
    dtype = np.float32 if train_cfg.dtype == "float32" else np.float64
    return train(build_model(model_cfg, dtype=dtype), data, train_cfg)
