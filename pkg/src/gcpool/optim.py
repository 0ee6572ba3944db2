"""SGD with momentum and the learning-rate schedules used in the experiments."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np


@dataclass
class SgdState:
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    velocity: list = field(default_factory=list)


def sgd_step(state: SgdState, params: list[dict], grads: list[dict]) -> list[dict]:
    """One in-place update of ``params``.

    ``v <- momentum * v + grad + weight_decay * param`` then
    ``param <- param - lr * v``.
    """
    if state.lr < 0:
        raise ValueError("learning rate must be non-negative")
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    if not state.velocity:
        state.velocity = [{k: np.zeros_like(v) for k, v in p.items()} for p in params]
    for p, g, vel in zip(params, grads, state.velocity):
        for name, w in p.items():
            gw = g[name]
            if gw.shape != w.shape:
                raise ValueError(f"gradient for {name} has shape {gw.shape}, expected {w.shape}")
            v = vel[name]
            v *= state.momentum
            v += gw
            if state.weight_decay:
                v += state.weight_decay * w
            if state.lr:
                w -= state.lr * v
    return params


SCHEDULE_KINDS = ("polynomial", "exponential", "stepdecay", "stagewise-linear", "stepwise-linear")


@dataclass(frozen=True)
class ScheduleSpec:
    """One learning-rate schedule.

    polynomial        ``l0 * (1 - (e - e_start) / (e_final - e_start)) ** power``, 0 past e_final
    exponential       ``l0 * base ** e``
    stepdecay         ``base ** (e // period + 1)``
    stagewise-linear  per stage ``(ls, le, n)``: ``ls - (ls - le) / stage_len * (e - n)``
    stepwise-linear   ``l0 * (1 - step / t_step)``; epochs map to ``e * steps_per_epoch``
    """

    kind: str
    l0: float = 0.1
    e_start: int = 0
    e_final: int = 50
    power: float = 1.0
    base: float = 0.1
    period: int = 30
    stages: tuple = ()
    stage_len: int = 50
    t_step: int = 0
    steps_per_epoch: int = 1

    def __post_init__(self):
        if self.kind not in SCHEDULE_KINDS:
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.kind == "polynomial" and not self.e_final > self.e_start:
            raise ValueError("polynomial schedule needs e_final > e_start")
        if self.kind == "stagewise-linear":
            starts = [n for _, _, n in self.stages]
            if not starts or starts != sorted(starts):
                raise ValueError("stages must be non-empty and ordered by start epoch")
            for a, b in zip(starts, starts[1:]):
                if b - a < self.stage_len:
                    raise ValueError("stages overlap")
        if self.kind == "stepwise-linear" and self.t_step <= 0:
            raise ValueError("stepwise-linear schedule needs t_step > 0")

    @property
    def first_epoch(self) -> int:
        if self.kind == "polynomial":
            return self.e_start
        if self.kind == "stagewise-linear":
            return self.stages[0][2]
        return 0


def lr_at(spec: ScheduleSpec, epoch: int, step: int | None = None) -> float:
    e = epoch
    if e < spec.first_epoch:
        raise ValueError(f"epoch {e} precedes schedule start {spec.first_epoch}")
    if spec.kind == "polynomial":
        if e >= spec.e_final:
            return 0.0
        return spec.l0 * (1 - (e - spec.e_start) / (spec.e_final - spec.e_start)) ** spec.power
    if spec.kind == "exponential":
        return spec.l0 * spec.base ** e
    if spec.kind == "stepdecay":
        return spec.base ** ((e // spec.period) + 1)
    if spec.kind == "stagewise-linear":
        ls, le, n = next(st for st in reversed(spec.stages) if st[2] <= e)
        if e > n + spec.stage_len:
            raise ValueError(f"epoch {e} is past the last stage")
        return ls - (ls - le) / spec.stage_len * (e - n)
    # stepwise-linear
    if step is None:
        step = e * spec.steps_per_epoch
    if step >= spec.t_step:
        return 0.0
    return spec.l0 * (1 - step / spec.t_step)


def emit_schedule(spec: ScheduleSpec, horizon: int) -> str:
    """CSV text ``epoch,lr`` for ``horizon`` epochs from the schedule's first epoch."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "lr"])
    start = spec.first_epoch
    for e in range(start, start + horizon):
        w.writerow([e, repr(lr_at(spec, e))])
    return buf.getvalue()


SHUFFLENET_T_STEP = 300_000
SHUFFLENET_EPOCHS = 240

PRESETS = {
    "resnet-norm": ScheduleSpec("stepdecay", base=0.1, period=30),
    "resnet-fast": ScheduleSpec("polynomial", l0=0.1, e_start=1, e_final=53, power=11),
    "resnet-adju": ScheduleSpec("polynomial", l0=0.1, e_start=1, e_final=50, power=2),
    "mobilenetv2-norm": ScheduleSpec("exponential", l0=0.045, base=0.98),
    "mobilenetv2-fast": ScheduleSpec("exponential", l0=0.06, base=0.92),
    "mobilenetv2-adju": ScheduleSpec(
        "stagewise-linear", stages=((6e-2, 1e-3, 0), (1e-2, 1e-4, 50), (1e-3, 1e-5, 100))),
    # t_step scales with the shortened epoch budgets (240 -> 60 / 100 epochs)
    "shufflenetv2-norm": ScheduleSpec("stepwise-linear", l0=0.5, t_step=SHUFFLENET_T_STEP,
                                      steps_per_epoch=SHUFFLENET_T_STEP // SHUFFLENET_EPOCHS),
    "shufflenetv2-fast": ScheduleSpec("stepwise-linear", l0=0.5, t_step=SHUFFLENET_T_STEP // 4,
                                      steps_per_epoch=SHUFFLENET_T_STEP // SHUFFLENET_EPOCHS),
    "shufflenetv2-adju": ScheduleSpec("stepwise-linear", l0=0.5,
                                      t_step=SHUFFLENET_T_STEP * 100 // 240,
                                      steps_per_epoch=SHUFFLENET_T_STEP // SHUFFLENET_EPOCHS),
}


def schedule_from_name(name: str, **overrides) -> ScheduleSpec:
    if name not in PRESETS and name not in SCHEDULE_KINDS:
        raise ValueError(f"unknown schedule {name!r}; presets: {', '.join(PRESETS)}")
    base = PRESETS.get(name)
    if base is None:
        return ScheduleSpec(name, **overrides)
    return ScheduleSpec(**{**base.__dict__, **overrides}) if overrides else base
