"""Training runs, probed training, run comparison and robustness evaluation."""

from __future__ import annotations

import configparser
import dataclasses
import io
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import data as data_mod
from .net import Batch, Network, backward, forward, predict
from .optim import SgdState, lr_at, schedule_from_name, sgd_step
from .probes import ProbeSeries, StepGrid, probe_record
from .robustness import (CORRUPTIONS, PERTURBATIONS, CorruptionSpec, corrupt,
                         corruption_error, flip_rate, perturb_sequence)


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        super().__init__("invalid configuration:\n  " + "\n  ".join(problems))
        self.problems = problems


@dataclass
class RunConfig:
    # dataset: "cov", "mnist:<dir>", "cifar10:<file>" or a dataset container path
    dataset: str = "cov"
    cov_classes: int = 4
    cov_channels: int = 4
    cov_size: int = 8
    cov_ratio: float = 0.6
    cov_train: int = 128
    cov_test: int = 64
    data_seed: int = 0
    # architecture; "{head}" and "{width}" are substituted
    arch: str = "conv3x3:8,conv1x1:{width},{head},dense"
    head: str = "gcp"
    width: int = 8
    schedule: str = "polynomial"
    lr: float = 0.05
    power: float = 2.0
    e_final: int = 0  # 0 means "epochs"
    base: float = 0.1
    period: int = 30
    momentum: float = 0.9
    weight_decay: float = 1e-4
    epochs: int = 20
    steps: int = 0  # >0 caps the total number of SGD steps
    batch_size: int = 32
    seed: int = 0
    probe_every: int = 0
    probe_a: float = 0.05
    probe_b: float = 2.0
    probe_points: int = 50
    probe_layer: int = -1  # -1 means the first convolution's output
    probe_descent: bool = False
    perturb_length: int = 8
    robust_images: int = 64

    def validate(self) -> "RunConfig":
        problems = []
        if self.head not in ("gap", "gcp"):
            problems.append(f"head: expected gap or gcp, got {self.head!r}")
        for name in ("epochs", "steps", "probe_every"):
            if getattr(self, name) < 0:
                problems.append(f"{name}: must be >= 0")
        for name in ("batch_size", "width", "cov_classes", "cov_channels", "cov_size",
                     "cov_train", "cov_test", "perturb_length", "robust_images"):
            if getattr(self, name) < 1:
                problems.append(f"{name}: must be >= 1")
        if self.lr < 0:
            problems.append("lr: must be >= 0")
        if not 0 <= self.momentum < 1:
            problems.append("momentum: must lie in [0, 1)")
        if not 0 <= self.probe_a < self.probe_b:
            problems.append("probe_a/probe_b: need 0 <= probe_a < probe_b")
        if self.probe_points < 2:
            problems.append("probe_points: must be >= 2")
        try:
            self.schedule_spec()
        except ValueError as exc:
            problems.append(f"schedule: {exc}")
        if problems:
            raise ConfigError(problems)
        return self

    def schedule_spec(self):
        if self.schedule == "polynomial":
            return schedule_from_name("polynomial", l0=self.lr, e_start=0,
                                      e_final=self.e_final or max(self.epochs, 1),
                                      power=self.power)
        if self.schedule == "constant":
            return schedule_from_name("exponential", l0=self.lr, base=1.0)
        if self.schedule == "exponential":
            return schedule_from_name("exponential", l0=self.lr, base=self.base)
        if self.schedule == "stepdecay":
            return schedule_from_name("stepdecay", base=self.base, period=self.period)
        return schedule_from_name(self.schedule)

    def arch_string(self) -> str:
        return self.arch.format(head=self.head, width=self.width)

    def grid(self) -> StepGrid:
        return StepGrid(self.probe_a, self.probe_b, self.probe_points)

    # -- ini round trip --
    def to_ini(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        cp["run"] = {f.name: str(getattr(self, f.name)) for f in fields(self)}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @classmethod
    def from_ini(cls, text: str, **overrides) -> "RunConfig":
        cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
        cp.read_string(text)
        values = dict(cp["run"]) if cp.has_section("run") else {}
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_mapping(values)

    @classmethod
    def from_mapping(cls, values: dict) -> "RunConfig":
        known = {f.name: f for f in fields(cls)}
        problems, kwargs = [], {}
        for key, raw in values.items():
            if key not in known:
                problems.append(f"{key}: unknown setting")
                continue
            typ = type(known[key].default)
            try:
                kwargs[key] = _coerce(raw, typ)
            except ValueError:
                problems.append(f"{key}: cannot parse {raw!r} as {typ.__name__}")
        if problems:
            raise ConfigError(problems)
        return cls(**kwargs).validate()


def _coerce(raw, typ):
    if isinstance(raw, typ):
        return raw
    if typ is bool:
        s = str(raw).strip().lower()
        if s in ("1", "true", "yes", "on"):
            return True
        if s in ("0", "false", "no", "off"):
            return False
        raise ValueError(raw)
    return typ(raw)


# -- data ------------------------------------------------------------------

def load_data(cfg: RunConfig):
    if cfg.dataset == "cov":
        spec = data_mod.SyntheticCovTaskSpec(
            classes=cfg.cov_classes, channels=cfg.cov_channels, height=cfg.cov_size,
            width=cfg.cov_size, spectrum_ratio=cfg.cov_ratio, train_per_class=cfg.cov_train,
            test_per_class=cfg.cov_test, seed=cfg.data_seed)
        return data_mod.gen_cov_task(spec)
    kind, _, where = cfg.dataset.partition(":")
    if kind == "mnist":
        d = Path(where)
        train = data_mod.load_mnist(d / "train-images-idx3-ubyte", d / "train-labels-idx1-ubyte")
        test = data_mod.load_mnist(d / "t10k-images-idx3-ubyte", d / "t10k-labels-idx1-ubyte",
                                   "test")
        return train, test
    if kind == "cifar10":
        d = Path(where)
        parts = [data_mod.read_cifar10_bin(d / f"data_batch_{i}.bin") for i in range(1, 6)]
        train = data_mod.Dataset(np.concatenate([p.images for p in parts]),
                                 np.concatenate([p.labels for p in parts]), "train")
        return train, data_mod.read_cifar10_bin(d / "test_batch.bin", "test")
    ds = data_mod.load_dataset(cfg.dataset)
    return ds, ds


def build_network(cfg: RunConfig, train: data_mod.Dataset) -> Network:
    return Network.from_arch(cfg.arch_string(), train.images.shape[1:], train.num_classes,
                             seed=cfg.seed)


def accuracy(net: Network, ds: data_mod.Dataset) -> float:
    if len(ds) == 0:
        return float("nan")
    return float(np.mean(predict(net, ds.images) == ds.labels))


# -- training --------------------------------------------------------------

@dataclass
class RunResult:
    net: Network
    rows: list  # (step, epoch, lr, train_loss, eval_acc or None)
    probes: ProbeSeries
    epoch_acc: list  # eval accuracy after each completed epoch

    def convergence_csv(self) -> str:
        lines = ["step,epoch,lr,train_loss,eval_acc"]
        for step, epoch, lr, loss, acc in self.rows:
            lines.append(f"{step},{epoch},{lr!r},{loss!r},{'' if acc is None else repr(acc)}")
        return "\n".join(lines) + "\n"


def train(cfg: RunConfig, train_ds=None, test_ds=None, on_step=None) -> RunResult:
    """Train with SGD, optionally probing the landscape every ``probe_every`` steps.

    Steps are numbered from 0; a probe is taken before the update at each step
    divisible by ``probe_every``.  Eval accuracy is recorded on the last step
    of every epoch.
    """
    cfg.validate()
    if train_ds is None:
        train_ds, test_ds = load_data(cfg)
    net = build_network(cfg, train_ds)
    sched = cfg.schedule_spec()
    state = SgdState(lr=0.0, momentum=cfg.momentum, weight_decay=cfg.weight_decay)
    series = ProbeSeries(cfg.head, cfg.seed, cfg.grid(), [])
    probe_index = None if cfg.probe_layer < 0 else cfg.probe_layer
    rows, epoch_acc = [], []
    n = len(train_ds)
    per_epoch = -(-n // cfg.batch_size)
    total = cfg.epochs * per_epoch
    if cfg.steps:
        total = min(total, cfg.steps) if cfg.epochs else cfg.steps
    epochs = -(-total // per_epoch) if total else 0
    step = 0
    for epoch in range(epochs):
        state.lr = lr_at(sched, sched.first_epoch + epoch)
        order = np.random.default_rng([cfg.seed, 7, epoch]).permutation(n)
        for s in range(0, n, cfg.batch_size):
            if step >= total:
                break
            idx = order[s:s + cfg.batch_size]
            batch = Batch(train_ds.images[idx], train_ds.labels[idx])
            _, loss, tape = forward(net, batch)
            if cfg.probe_every and step % cfg.probe_every == 0:
                series.append(probe_record(net, tape, step, probe_index, cfg.grid(),
                                           cfg.probe_descent))
            grads = backward(net, tape)
            sgd_step(state, net.params, grads.params)
            net.bump()
            last = s + cfg.batch_size >= n or step + 1 == total
            acc = accuracy(net, test_ds) if last else None
            if acc is not None:
                epoch_acc.append(acc)
            rows.append((step, epoch, state.lr, loss, acc))
            if on_step:
                on_step(step, loss, acc)
            step += 1
    return RunResult(net, rows, series, epoch_acc)


def run_probed_training(cfg: RunConfig, **kw) -> RunResult:
    if not cfg.probe_every:
        raise ConfigError(["probe_every: must be > 0 for a probed run"])
    return train(cfg, **kw)


def read_epoch_accuracy(csv_text: str) -> list[float]:
    accs = []
    for line in csv_text.strip().splitlines()[1:]:
        cell = line.split(",")[4]
        if cell:
            accs.append(float(cell))
    return accs


def matching_epoch(acc_a: list[float], acc_b: list[float]) -> int | None:
    """First (1-based) epoch at which run A's accuracy reaches run B's final accuracy."""
    if not acc_b:
        raise ValueError("run B has no evaluated epochs")
    target = acc_b[-1]
    for i, a in enumerate(acc_a):
        if a >= target:
            return i + 1
    return None


# -- robustness ------------------------------------------------------------

def _error(net, images, labels) -> float:
    return float(np.mean(predict(net, images) != labels))


def evaluate_robustness(model: Network, baseline: Network, ds: data_mod.Dataset,
                        seed: int = 0, perturb_length: int = 8, n_sequences: int = 64) -> dict:
    """Corruption errors, CE/mCE and flip rates of ``model`` against ``baseline``."""
    for name, net in (("model", model), ("baseline", baseline)):
        if tuple(net.input_shape) != tuple(ds.images.shape[1:]):
            raise ValueError(f"{name} expects input {net.input_shape}, data is {ds.images.shape[1:]}")
    pixels = ds.to_pixels()
    clean = {"model": _error(model, ds.images, ds.labels),
             "baseline": _error(baseline, ds.images, ds.labels)}
    table = []
    model_err = {c: [] for c in CORRUPTIONS}
    base_err = {c: [] for c in CORRUPTIONS}
    for ci, c in enumerate(CORRUPTIONS):
        for sev in range(1, 6):
            x = ds.from_pixels(corrupt(pixels, CorruptionSpec(c, sev), seed=seed * 100 + ci * 10 + sev))
            em, eb = _error(model, x, ds.labels), _error(baseline, x, ds.labels)
            model_err[c].append(em)
            base_err[c].append(eb)
            table.append({"corruption": c, "severity": sev, "err_model": em, "err_baseline": eb})
    ce = corruption_error(model_err, base_err, clean["model"], clean["baseline"])
    preds_m = {k: [] for k in PERTURBATIONS}
    preds_b = {k: [] for k in PERTURBATIONS}
    for i in range(min(n_sequences, len(ds))):
        for k in PERTURBATIONS:
            seq = perturb_sequence(pixels[i], k, perturb_length, seed=seed * 1000 + i)
            frames = ds.from_pixels(seq.frames)
            preds_m[k].append(predict(model, frames).tolist())
            preds_b[k].append(predict(baseline, frames).tolist())
    fr = flip_rate(preds_m, preds_b)
    return {"clean_error": clean, "table": table, **ce, **fr}


def robustness_csv(report: dict) -> str:
    lines = ["corruption,severity,err_model,err_baseline"]
    for row in report["table"]:
        lines.append(f"{row['corruption']},{row['severity']},{row['err_model']!r},"
                     f"{row['err_baseline']!r}")
    return "\n".join(lines) + "\n"


def replace(cfg: RunConfig, **changes) -> RunConfig:
    return dataclasses.replace(cfg, **changes).validate()
