"""Loss-landscape probes taken along the current gradient direction.

Both probes displace an activation ``X`` to ``X + eta * grad L(X)`` for every
step size ``eta`` in a grid.  The loss probe records ``L`` at each displaced
point; the gradient probe records ``||grad L(X) - grad L(displaced)||_2``.
Their ranges (max minus min over the grid) are the smoothness measures.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .net import Network, ActivationTape, grad_wrt_activation, loss_and_grad_from

# maps an activation to (loss, gradient of the loss w.r.t. that activation)
Suffix = Callable[[np.ndarray], "tuple[float, np.ndarray]"]


@dataclass(frozen=True)
class StepGrid:
    a: float = 0.05
    b: float = 2.0
    count: int = 50

    def __post_init__(self):
        if not (0 <= self.a < self.b):
            raise ValueError(f"grid needs 0 <= a < b, got [{self.a}, {self.b}]")
        if self.count < 2:
            raise ValueError("grid needs at least 2 points")

    def etas(self) -> np.ndarray:
        return np.linspace(self.a, self.b, self.count)


@dataclass(frozen=True)
class ProbeRecord:
    step: int
    loss: float
    dl_min: float
    dl_max: float
    dg_min: float
    dg_max: float

    @property
    def dl_range(self) -> float:
        return self.dl_max - self.dl_min

    @property
    def dg_range(self) -> float:
        return self.dg_max - self.dg_min


@dataclass
class ProbeSeries:
    head: str
    seed: int
    grid: StepGrid
    records: list

    def append(self, rec: ProbeRecord):
        if self.records and rec.step <= self.records[-1].step:
            raise ValueError("probe steps must be strictly increasing")
        self.records.append(rec)

    def to_csv(self) -> str:
        lines = ["step,loss,dl_min,dl_max,dg_min,dg_max"]
        for r in self.records:
            lines.append(",".join([str(r.step)] + [repr(float(v)) for v in
                                  (r.loss, r.dl_min, r.dl_max, r.dg_min, r.dg_max)]))
        return "\n".join(lines) + "\n"


def _etas(grid) -> np.ndarray:
    return grid.etas() if isinstance(grid, StepGrid) else np.asarray(grid, dtype=np.float64)


def _direction(grad: np.ndarray, descent: bool) -> np.ndarray:
    return -grad if descent else grad


def lipschitz_samples(suffix: Suffix, x: np.ndarray, grad: np.ndarray, grid,
                      descent: bool = False) -> np.ndarray:
    d = _direction(grad, descent)
    return np.array([suffix(x + eta * d)[0] for eta in _etas(grid)])


def predictiveness_samples(suffix: Suffix, x: np.ndarray, grad: np.ndarray, grid,
                           descent: bool = False) -> np.ndarray:
    d = _direction(grad, descent)
    return np.array([np.linalg.norm((grad - suffix(x + eta * d)[1]).ravel())
                     for eta in _etas(grid)])


def landscape_samples(suffix: Suffix, x: np.ndarray, grad: np.ndarray, grid,
                      descent: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Both probes from one suffix evaluation per grid point."""
    d = _direction(grad, descent)
    dl, dg = [], []
    for eta in _etas(grid):
        loss, g = suffix(x + eta * d)
        dl.append(loss)
        dg.append(np.linalg.norm((grad - g).ravel()))
    return np.array(dl), np.array(dg)


def net_suffix(net: Network, tape: ActivationTape, index: int) -> Suffix:
    return lambda a: loss_and_grad_from(net, tape, index, a)


def _resolve_index(net: Network, index: int | None) -> int:
    return net.first_conv_index() if index is None else index


def loss_lipschitz_probe(net: Network, tape: ActivationTape, index: int | None = None,
                         grid: StepGrid = StepGrid(), descent: bool = False):
    """``(dl_min, dl_max, samples)`` at layer ``index`` (default: first conv output)."""
    index = _resolve_index(net, index)
    x = tape.outputs[index]
    g = grad_wrt_activation(net, tape, index)
    s = lipschitz_samples(net_suffix(net, tape, index), x, g, grid, descent)
    return float(s.min()), float(s.max()), s


def gradient_predictiveness_probe(net: Network, tape: ActivationTape, index: int | None = None,
                                  grid: StepGrid = StepGrid(), descent: bool = False):
    """``(dg_min, dg_max, samples)`` at layer ``index`` (default: first conv output)."""
    index = _resolve_index(net, index)
    x = tape.outputs[index]
    g = grad_wrt_activation(net, tape, index)
    s = predictiveness_samples(net_suffix(net, tape, index), x, g, grid, descent)
    return float(s.min()), float(s.max()), s


def probe_record(net: Network, tape: ActivationTape, step: int, index: int | None = None,
                 grid: StepGrid = StepGrid(), descent: bool = False) -> ProbeRecord:
    index = _resolve_index(net, index)
    x = tape.outputs[index]
    g = grad_wrt_activation(net, tape, index)
    dl, dg = landscape_samples(net_suffix(net, tape, index), x, g, grid, descent)
    return ProbeRecord(step, tape.loss, float(dl.min()), float(dl.max()),
                       float(dg.min()), float(dg.max()))


def quadratic_suffix(x: np.ndarray) -> tuple[float, np.ndarray]:
    """``L(x) = 1/2 ||x||^2``, whose probes have closed forms."""
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * float(np.sum(x * x)), x.copy()


def linear_suffix(w: np.ndarray) -> Suffix:
    w = np.asarray(w, dtype=np.float64)
    return lambda x: (float(np.sum(w * x)), w.copy())
