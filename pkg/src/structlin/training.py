"""Gradients, SGD with (compression-ratio-scaled) weight decay, and teacher fitting."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Union

import numpy as np

from . import linop
from .errors import DivergedError, ShapeError
from .linop import OperatorSpec, ParamStore


def grad(spec: OperatorSpec, params: ParamStore, x, upstream) -> tuple[np.ndarray, np.ndarray]:
    """Reverse-mode derivative of ``apply`` for the scalar ``<upstream, apply(x)>``.

    Returns ``(param_grads, input_grad)``; ``param_grads`` has the layout of
    ``params.flat`` and is summed over any leading batch axes of ``x``.
    """
    linop.check_params(spec, params)
    x = np.asarray(x, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    if x.shape[-1] != spec.n_in or upstream.shape[-1] != spec.n_out:
        raise ShapeError(f"grad expects (..., {spec.n_in}) inputs and (..., {spec.n_out}) upstream")
    if x.shape[:-1] != upstream.shape[:-1]:
        raise ShapeError(f"batch shapes differ: {x.shape[:-1]} vs {upstream.shape[:-1]}")
    return linop.impl(spec.kind).grad(spec, params, x, upstream)


def crs_decay(base_decay: float, m: int, n: int) -> float:
    """Weight decay scaled by the compression ratio ``m / n``.

    Keeps the summed prior variance of ``m`` compressed weights equal to that
    of the ``n`` dense weights they replace; ``m == n`` gives ``base_decay``.
    """
    if m < 1 or n < 1:
        raise ValueError(f"parameter counts must be positive, got m={m}, n={n}")
    if m == n:
        return base_decay
    return base_decay * m / n


def sgd_step(params, grads, velocity, lr: float, momentum: float, decay: float, epoch: int = 0):
    """One heavy-ball step with coupled L2: ``v <- mu v + (g + d p)``, ``p <- p - lr v``."""
    grads = np.asarray(grads, dtype=np.float64)
    if not np.all(np.isfinite(grads)):
        raise DivergedError(epoch)
    g = grads + decay * params
    velocity = momentum * velocity + g
    return params - lr * velocity, velocity


@dataclass(frozen=True)
class StepSchedule:
    milestones: tuple[int, ...] = (60, 120, 160)
    factor: float = 0.2

    def lr(self, lr0: float, epoch: int) -> float:
        return lr0 * self.factor ** sum(epoch >= m for m in self.milestones)

    def final_stage_start(self, epochs: int) -> int:
        return self.milestones[-1] if self.milestones else epochs

    def scaled(self, old_epochs: int, new_epochs: int) -> "StepSchedule":
        ms = tuple(max(1, round(m * new_epochs / old_epochs)) for m in self.milestones)
        return replace(self, milestones=ms)

    def to_json(self) -> dict:
        return {"type": "step", "milestones": list(self.milestones), "factor": self.factor}


@dataclass(frozen=True)
class CosineSchedule:
    total_epochs: int

    def lr(self, lr0: float, epoch: int) -> float:
        return 0.5 * lr0 * (1.0 + math.cos(math.pi * min(epoch, self.total_epochs) / self.total_epochs))

    def final_stage_start(self, epochs: int) -> int:
        return epochs

    def scaled(self, old_epochs: int, new_epochs: int) -> "CosineSchedule":
        return CosineSchedule(max(1, round(self.total_epochs * new_epochs / old_epochs)))

    def to_json(self) -> dict:
        return {"type": "cosine", "total_epochs": self.total_epochs}


Schedule = Union[StepSchedule, CosineSchedule]


def schedule_from_json(obj: dict) -> Schedule:
    kind = obj.get("type", "step")
    if kind == "step":
        return StepSchedule(tuple(int(m) for m in obj.get("milestones", (60, 120, 160))), float(obj.get("factor", 0.2)))
    if kind == "cosine":
        return CosineSchedule(int(obj["total_epochs"]))
    raise ValueError(f"unknown schedule type {kind!r}")


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 0.1
    schedule: Schedule = field(default_factory=StepSchedule)
    momentum: float = 0.9
    base_decay: float = 5e-4
    crs_enabled: bool = True
    epochs: int = 200
    batch: int = 128
    seed: int = 0
    steps_per_epoch: int = 20

    def __post_init__(self):
        if not self.lr0 > 0:
            raise ValueError("lr0 must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.base_decay < 0:
            raise ValueError("base_decay must be non-negative")
        if self.epochs < 1 or self.batch < 1 or self.steps_per_epoch < 1:
            raise ValueError("epochs, batch and steps_per_epoch must be >= 1")

    def with_epochs(self, epochs: int) -> "TrainConfig":
        """Shorten or stretch the run, moving schedule milestones proportionally."""
        return replace(self, epochs=epochs, schedule=self.schedule.scaled(self.epochs, epochs))

    def to_json(self) -> dict:
        d = asdict(self)
        d["schedule"] = self.schedule.to_json()
        return d

    @classmethod
    def from_json(cls, obj: dict) -> "TrainConfig":
        obj = dict(obj)
        if "schedule" in obj:
            obj["schedule"] = schedule_from_json(obj["schedule"])
        return cls(**obj)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    eval_loss: float
    lr: float
    effective_decay: float


CSV_FIELDS = ("epoch", "train_loss", "eval_loss", "lr", "effective_decay")


@dataclass
class FitTrace:
    records: list[EpochRecord]
    final_params: ParamStore
    diverged: bool = False

    @property
    def eval_losses(self) -> np.ndarray:
        return np.array([r.eval_loss for r in self.records])

    @property
    def final_eval_loss(self) -> float:
        if self.diverged or not self.records:
            return math.inf
        return self.records[-1].eval_loss

    def to_csv(self, path: "str | Path | None" = None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_FIELDS)
        for r in self.records:
            writer.writerow([r.epoch, repr(r.train_loss), repr(r.eval_loss), repr(r.lr), repr(r.effective_decay)])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @staticmethod
    def records_from_csv(text: str) -> list[EpochRecord]:
        rows = csv.DictReader(io.StringIO(text))
        return [
            EpochRecord(int(r["epoch"]), float(r["train_loss"]), float(r["eval_loss"]), float(r["lr"]), float(r["effective_decay"]))
            for r in rows
        ]


def _loss_and_grad(impl, spec, params, x, y):
    # Mean over batch rows and output coordinates.
    scale = 2.0 / (x.shape[0] * spec.n_out)
    if getattr(impl, "via_matrix", False):
        w = impl.materialize(spec, params)
        r = x @ w.T - y
        g = impl.grad_from_matrix(spec, params, scale * (r.T @ x))
    else:
        r = impl.apply(spec, params, x) - y
        g, _ = impl.grad(spec, params, x, scale * r)
    return float(np.mean(r * r)), g


def effective_decay(spec: OperatorSpec, config: TrainConfig) -> float:
    if not config.crs_enabled:
        return config.base_decay
    return crs_decay(config.base_decay, linop.param_count(spec), spec.dense_params)


def fit_matrix(spec: OperatorSpec, teacher, config: TrainConfig, params: ParamStore | None = None) -> FitTrace:
    """Regress the operator onto a dense teacher with minibatch SGD.

    Minimises ``E ||apply(x) - teacher @ x||^2`` over ``x ~ N(0, I)``. The
    per-epoch eval loss is the mean squared entrywise gap between the
    materialised operator and the teacher. A non-finite loss or gradient ends
    the run early with ``diverged`` set.
    """
    teacher = np.asarray(teacher, dtype=np.float64)
    if teacher.shape != (spec.n_out, spec.n_in):
        raise ShapeError(f"teacher has shape {teacher.shape}, operator is {spec.n_out}x{spec.n_in}")
    impl = linop.impl(spec.kind)
    params = linop.build(spec) if params is None else params.copy()
    linop.check_params(spec, params)
    rng = np.random.default_rng(config.seed)
    decay = effective_decay(spec, config)
    flat = params.flat.copy()
    velocity = np.zeros_like(flat)
    records: list[EpochRecord] = []
    diverged = False
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(config.epochs):
            lr = config.schedule.lr(config.lr0, epoch)
            total = 0.0
            try:
                for _ in range(config.steps_per_epoch):
                    x = rng.standard_normal((config.batch, spec.n_in))
                    loss, g = _loss_and_grad(impl, spec, params, x, x @ teacher.T)
                    if not math.isfinite(loss):
                        raise DivergedError(epoch, "non-finite loss")
                    total += loss
                    flat, velocity = sgd_step(flat, g, velocity, lr, config.momentum, decay, epoch)
                    params = params.with_flat(flat)
            except DivergedError:
                diverged = True
                break
            gap = impl.materialize(spec, params) - teacher
            eval_loss = float(np.mean(gap * gap))
            if not math.isfinite(eval_loss):
                diverged = True
                break
            records.append(EpochRecord(epoch, total / config.steps_per_epoch, eval_loss, lr, decay))
    return FitTrace(records, params, diverged)


def random_teacher(n_out: int, n_in: int, seed: int = 0) -> np.ndarray:
    """Dense teacher with i.i.d. ``N(0, 1/n_in)`` entries."""
    return np.random.default_rng(seed).standard_normal((n_out, n_in)) / math.sqrt(n_in)


def constant_predictor_loss(teacher) -> float:
    """Eval loss of the best matrix with all entries equal."""
    teacher = np.asarray(teacher, dtype=np.float64)
    return float(np.mean((teacher - teacher.mean()) ** 2))
