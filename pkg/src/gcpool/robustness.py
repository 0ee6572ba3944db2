"""Image corruptions, perturbation sequences and the corruption/flip metrics.

Images are ``(..., C, H, W)`` arrays with pixel values in [0, 1].

Severity tables (index = severity - 1):

    gaussian-noise  noise std         0.04 0.08 0.12 0.18 0.26
    box-blur        kernel width      3    5    7    9    11
    brightness      additive offset   0.1  0.2  0.3  0.4  0.5
    contrast        factor about mean 0.75 0.6  0.45 0.3  0.15
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

SEVERITY_TABLES = {
    "gaussian-noise": (0.04, 0.08, 0.12, 0.18, 0.26),
    "box-blur": (3, 5, 7, 9, 11),
    "brightness": (0.1, 0.2, 0.3, 0.4, 0.5),
    "contrast": (0.75, 0.6, 0.45, 0.3, 0.15),
}
CORRUPTIONS = tuple(SEVERITY_TABLES)
PERTURBATIONS = ("translate", "rotate", "noise-walk")
ROTATE_DEGREES_PER_FRAME = 2.0
NOISE_WALK_STD = 0.01


@dataclass(frozen=True)
class CorruptionSpec:
    kind: str
    severity: int

    def __post_init__(self):
        if self.kind not in SEVERITY_TABLES:
            raise ValueError(f"unknown corruption {self.kind!r}")
        if not 1 <= self.severity <= 5:
            raise ValueError(f"severity must be in 1..5, got {self.severity}")

    @property
    def magnitude(self):
        return SEVERITY_TABLES[self.kind][self.severity - 1]


def corrupt(images: np.ndarray, spec: CorruptionSpec, seed: int = 0) -> np.ndarray:
    images = np.asarray(images, dtype=np.float64)
    m = spec.magnitude
    if spec.kind == "gaussian-noise":
        rng = np.random.default_rng(seed)
        out = images + m * rng.standard_normal(images.shape)
    elif spec.kind == "box-blur":
        size = [1] * (images.ndim - 2) + [m, m]
        out = ndimage.uniform_filter(images, size=size, mode="nearest")
    elif spec.kind == "brightness":
        out = images + m
    else:
        mean = images.mean(axis=(-3, -2, -1), keepdims=True)
        out = (images - mean) * m + mean
    return np.clip(out, 0.0, 1.0)


@dataclass
class PerturbationSequence:
    kind: str
    frames: np.ndarray  # (length, C, H, W); frame 0 is the unperturbed image

    def __len__(self) -> int:
        return len(self.frames)


def _translate(image: np.ndarray, t: int) -> np.ndarray:
    # rightward shift by t pixels, left edge replicated
    W = image.shape[-1]
    cols = np.clip(np.arange(W) - t, 0, W - 1)
    return image[..., cols]


def perturb_sequence(image: np.ndarray, kind: str, length: int = 31,
                     seed: int = 0) -> PerturbationSequence:
    image = np.asarray(image, dtype=np.float64)
    if kind not in PERTURBATIONS:
        raise ValueError(f"unknown perturbation {kind!r}")
    if length < 1:
        raise ValueError("length must be >= 1")
    frames = [image]
    if kind == "noise-walk":
        rng = np.random.default_rng(seed)
        walk = np.zeros_like(image)
    for t in range(1, length):
        if kind == "translate":
            f = _translate(image, t)
        elif kind == "rotate":
            f = ndimage.rotate(image, t * ROTATE_DEGREES_PER_FRAME, axes=(-1, -2),
                               reshape=False, order=1, mode="nearest")
        else:
            walk = walk + NOISE_WALK_STD * rng.standard_normal(image.shape)
            f = image + walk
        frames.append(np.clip(f, 0.0, 1.0))
    return PerturbationSequence(kind, np.stack(frames))


def corruption_error(model_err: dict, base_err: dict, model_clean: float | None = None,
                     base_clean: float | None = None) -> dict:
    """CE per corruption, mCE, and (given clean errors) relative CE and relative mCE.

    ``model_err`` and ``base_err`` map corruption name to a sequence of error
    rates indexed by severity.  All outputs are on the x100 scale.  Cells
    whose baseline denominator is zero are excluded with a warning.
    """
    if set(model_err) != set(base_err):
        raise ValueError("model and baseline tables cover different corruptions")
    ce, rel = {}, {}
    for c in model_err:
        m = np.asarray(model_err[c], dtype=np.float64)
        b = np.asarray(base_err[c], dtype=np.float64)
        if m.shape != b.shape:
            raise ValueError(f"{c}: severity levels differ between model and baseline")
        den = b.sum()
        if den == 0:
            warnings.warn(f"{c}: baseline error is zero, excluded from mCE")
        else:
            ce[c] = 100.0 * (m.sum() / den)
        if model_clean is not None and base_clean is not None:
            rden = (b - base_clean).sum()
            if rden == 0:
                warnings.warn(f"{c}: baseline has no degradation, excluded from relative mCE")
            else:
                rel[c] = 100.0 * ((m - model_clean).sum() / rden)
    out = {"ce": ce, "mce": float(np.mean(list(ce.values()))) if ce else float("nan")}
    if model_clean is not None and base_clean is not None:
        out["relative_ce"] = rel
        out["relative_mce"] = float(np.mean(list(rel.values()))) if rel else float("nan")
    return out


def flip_probability(predictions) -> float:
    """Fraction of consecutive frames whose predicted label changes."""
    p = np.asarray(predictions)
    if p.ndim != 1 or len(p) < 2:
        raise ValueError("flip probability needs a sequence of at least 2 predictions")
    return float(np.mean(p[1:] != p[:-1]))


def flip_rate(model_preds: dict, base_preds: dict) -> dict:
    """Per-perturbation flip probabilities and mFR relative to a baseline (x100).

    Each dict maps a perturbation kind to a list of prediction sequences.
    """
    fp_model = {k: float(np.mean([flip_probability(s) for s in v])) for k, v in model_preds.items()}
    fp_base = {k: float(np.mean([flip_probability(s) for s in v])) for k, v in base_preds.items()}
    fr = {}
    for k in fp_model:
        if fp_base.get(k, 0.0) == 0.0:
            warnings.warn(f"{k}: baseline never flips, excluded from mFR")
            continue
        fr[k] = 100.0 * (fp_model[k] / fp_base[k])
    return {"fp_model": fp_model, "fp_baseline": fp_base, "fr": fr,
            "mfr": float(np.mean(list(fr.values()))) if fr else float("nan")}
