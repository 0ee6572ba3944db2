"""A small CNN with hand-written backward passes.

Images are ``(B, C, H, W)`` float64 arrays.  Every layer caches what its
backward pass needs on an :class:`ActivationTape`, which also lets callers
re-enter the network at any interior activation (``forward_from``) and get
the gradient of the loss with respect to that activation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import pooling

CONV_KINDS = ("conv3x3", "conv1x1")
HEAD_KINDS = ("gap-head", "gcp-head")
KINDS = CONV_KINDS + ("relu", "maxpool2x2") + HEAD_KINDS + ("dense",)

CHECKPOINT_FORMAT = "gcpool-checkpoint"
CHECKPOINT_VERSION = 1


class NetworkError(ValueError):
    pass


class StaleTapeError(RuntimeError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_channels: int
    out_channels: int
    stride: int = 1

    @property
    def ksize(self) -> int:
        return 3 if self.kind == "conv3x3" else 1


@dataclass
class Batch:
    images: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4:
            raise NetworkError(f"images must be (B, C, H, W), got {self.images.shape}")
        if self.labels.shape != (self.images.shape[0],):
            raise NetworkError("labels must be a length-B vector")
        if not np.all(np.isfinite(self.images)):
            raise NetworkError("images contain non-finite values")


def layer_output_shape(spec: LayerSpec, shape: tuple) -> tuple:
    """Per-sample output shape of ``spec`` applied to ``shape``."""
    if spec.kind in CONV_KINDS:
        c, h, w = shape
        pad = 1 if spec.kind == "conv3x3" else 0
        k = spec.ksize
        ho = (h + 2 * pad - k) // spec.stride + 1
        wo = (w + 2 * pad - k) // spec.stride + 1
        return (spec.out_channels, ho, wo)
    if spec.kind == "relu":
        return shape
    if spec.kind == "maxpool2x2":
        c, h, w = shape
        return (c, h // 2, w // 2)
    if spec.kind == "gap-head":
        return (shape[0],)
    if spec.kind == "gcp-head":
        d = shape[0]
        return (d * (d + 1) // 2,)
    if spec.kind == "dense":
        return (spec.out_channels,)
    raise NetworkError(f"unknown layer kind {spec.kind!r}")


def validate_layers(layers: list[LayerSpec], input_shape: tuple) -> list[tuple]:
    """Check the chain composes and return every layer's output shape."""
    heads = [i for i, s in enumerate(layers) if s.kind in HEAD_KINDS]
    if len(heads) != 1:
        raise NetworkError(f"network needs exactly one pooling head, found {len(heads)}")
    head = heads[0]
    convs = [i for i, s in enumerate(layers) if s.kind in CONV_KINDS]
    if convs and convs[-1] > head:
        raise NetworkError("pooling head must follow the last convolution")
    shapes = []
    shape = tuple(input_shape)
    for i, spec in enumerate(layers):
        if spec.kind not in KINDS:
            raise NetworkError(f"layer {i}: unknown kind {spec.kind!r}")
        spatial = len(shape) == 3
        if spec.kind in CONV_KINDS + ("maxpool2x2",) + HEAD_KINDS and not spatial:
            raise NetworkError(f"layer {i} ({spec.kind}) needs a spatial input, got {shape}")
        if spec.kind == "dense" and spatial:
            raise NetworkError(f"layer {i} (dense) must follow the pooling head")
        if spec.kind in CONV_KINDS + ("dense",) and spec.in_channels != shape[0]:
            raise NetworkError(
                f"layer {i} ({spec.kind}) expects {spec.in_channels} input channels, got {shape[0]}")
        if spec.kind == "maxpool2x2" and (shape[1] < 2 or shape[2] < 2):
            raise NetworkError(f"layer {i} (maxpool2x2) input {shape} is too small")
        shape = layer_output_shape(spec, shape)
        shapes.append(shape)
    if layers[-1].kind != "dense":
        raise NetworkError("network must end with a dense classifier")
    return shapes


def parse_arch(text: str, in_channels: int, num_classes: int) -> list[LayerSpec]:
    """Build layer specs from a compact string.

    Tokens are comma separated: ``conv3x3:8``, ``conv3x3:8/2`` (stride 2),
    ``conv1x1:16``, ``relu``, ``maxpool``, ``gap``, ``gcp``, ``dense``.
    The final dense layer maps to ``num_classes``.
    """
    layers = []
    c = in_channels
    aliases = {"maxpool": "maxpool2x2", "gap": "gap-head", "gcp": "gcp-head"}
    for tok in (t.strip() for t in text.split(",") if t.strip()):
        name, _, arg = tok.partition(":")
        kind = aliases.get(name, name)
        if kind in CONV_KINDS:
            width, _, stride = arg.partition("/")
            out = int(width)
            layers.append(LayerSpec(kind, c, out, int(stride) if stride else 1))
            c = out
        elif kind == "dense":
            out = int(arg) if arg else num_classes
            layers.append(LayerSpec(kind, c, out))
            c = out
        elif kind in ("relu", "maxpool2x2"):
            layers.append(LayerSpec(kind, c, c))
        elif kind in HEAD_KINDS:
            layers.append(LayerSpec(kind, c, c))
            c = c if kind == "gap-head" else c * (c + 1) // 2
        else:
            raise NetworkError(f"unknown layer token {tok!r}")
    return layers


def default_arch(head: str = "gcp", width: int = 16) -> str:
    return f"conv3x3:8,relu,maxpool,conv3x3:16,relu,conv1x1:{width},{head},dense"


class Network:
    def __init__(self, layers: list[LayerSpec], input_shape: tuple, seed: int = 0,
                 params: list[dict] | None = None):
        self.layers = list(layers)
        self.input_shape = tuple(int(s) for s in input_shape)
        self.seed = int(seed)
        self.shapes = validate_layers(self.layers, self.input_shape)
        self.params = params if params is not None else self._init_params()
        self.version = 0
        for i, (spec, p) in enumerate(zip(self.layers, self.params)):
            for name, arr in self._param_shapes(spec).items():
                if p.get(name) is None or p[name].shape != arr:
                    raise NetworkError(f"layer {i}: parameter {name} has wrong shape")

    @classmethod
    def from_arch(cls, arch: str, input_shape: tuple, num_classes: int, seed: int = 0):
        return cls(parse_arch(arch, input_shape[0], num_classes), input_shape, seed)

    @staticmethod
    def _param_shapes(spec: LayerSpec) -> dict:
        if spec.kind in CONV_KINDS:
            k = spec.ksize
            return {"W": (spec.out_channels, spec.in_channels, k, k), "b": (spec.out_channels,)}
        if spec.kind == "dense":
            return {"W": (spec.out_channels, spec.in_channels), "b": (spec.out_channels,)}
        return {}

    def _init_params(self) -> list[dict]:
        rng = np.random.default_rng(self.seed)
        params = []
        for spec in self.layers:
            shapes = self._param_shapes(spec)
            if not shapes:
                params.append({})
                continue
            wshape = shapes["W"]
            fan_in = int(np.prod(wshape[1:]))
            params.append({
                "W": rng.standard_normal(wshape) * np.sqrt(2.0 / fan_in),
                "b": np.zeros(shapes["b"]),
            })
        return params

    @property
    def num_classes(self) -> int:
        return self.layers[-1].out_channels

    @property
    def head_index(self) -> int:
        return next(i for i, s in enumerate(self.layers) if s.kind in HEAD_KINDS)

    @property
    def head_kind(self) -> str:
        return self.layers[self.head_index].kind

    def first_conv_index(self) -> int:
        return next(i for i, s in enumerate(self.layers) if s.kind in CONV_KINDS)

    def bump(self):
        """Mark parameters as changed; outstanding tapes become stale."""
        self.version += 1

    def clone(self) -> "Network":
        params = [{k: v.copy() for k, v in p.items()} for p in self.params]
        net = Network(self.layers, self.input_shape, self.seed, params)
        return net

    def flat_params(self) -> np.ndarray:
        arrs = [p[k].ravel() for p in self.params for k in sorted(p)]
        return np.concatenate(arrs) if arrs else np.zeros(0)


# -- layer kernels ---------------------------------------------------------

def _conv_forward(x, W, b, stride, pad):
    k = W.shape[-1]
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    B, C, Ho, Wo = win.shape[:4]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(B * Ho * Wo, C * k * k)
    out = cols @ W.reshape(W.shape[0], -1).T + b
    y = out.reshape(B, Ho, Wo, -1).transpose(0, 3, 1, 2)
    return np.ascontiguousarray(y), (cols, xp.shape, Ho, Wo)


def _conv_backward(dy, W, cache, stride, pad):
    cols, xp_shape, Ho, Wo = cache
    O, C, k, _ = W.shape
    B = dy.shape[0]
    dy2 = dy.transpose(0, 2, 3, 1).reshape(-1, O)
    dW = (dy2.T @ cols).reshape(W.shape)
    db = dy2.sum(axis=0)
    dcols = (dy2 @ W.reshape(O, -1)).reshape(B, Ho, Wo, C, k, k)
    dxp = np.zeros(xp_shape)
    for i in range(k):
        for j in range(k):
            dxp[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride] += \
                dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    dx = dxp[:, :, pad:xp_shape[2] - pad, pad:xp_shape[3] - pad] if pad else dxp
    return dx, {"W": dW, "b": db}


def _maxpool_forward(x):
    B, C, H, W = x.shape
    x = x[:, :, :H // 2 * 2, :W // 2 * 2]
    win = x.reshape(B, C, H // 2, 2, W // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    win = win.reshape(B, C, H // 2, W // 2, 4)
    arg = np.argmax(win, axis=-1)
    y = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    return y, (arg, (B, C, H, W))


def _maxpool_backward(dy, cache):
    arg, (B, C, H, W) = cache
    dwin = np.zeros(dy.shape + (4,))
    np.put_along_axis(dwin, arg[..., None], dy[..., None], axis=-1)
    h2, w2 = H // 2, W // 2
    d = dwin.reshape(B, C, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, 2 * h2, 2 * w2)
    dx = np.zeros((B, C, H, W))
    dx[:, :, :2 * h2, :2 * w2] = d
    return dx


def _to_feature_matrix(x):
    B, C, H, W = x.shape
    return x.reshape(B, C, H * W).transpose(0, 2, 1)


def _from_feature_matrix(dX, shape):
    B, C, H, W = shape
    return dX.transpose(0, 2, 1).reshape(B, C, H, W)


def layer_forward(spec: LayerSpec, p: dict, x: np.ndarray):
    kind = spec.kind
    if kind in CONV_KINDS:
        return _conv_forward(x, p["W"], p["b"], spec.stride, 1 if kind == "conv3x3" else 0)
    if kind == "relu":
        return np.maximum(x, 0.0), x > 0
    if kind == "maxpool2x2":
        return _maxpool_forward(x)
    if kind == "gap-head":
        return pooling.gap_forward(_to_feature_matrix(x)), x.shape
    if kind == "gcp-head":
        vec, ctx = pooling.gcp_forward(_to_feature_matrix(x))
        return vec, (ctx, x.shape)
    if kind == "dense":
        return x @ p["W"].T + p["b"], x
    raise NetworkError(f"unknown layer kind {kind!r}")


def layer_backward(spec: LayerSpec, p: dict, dy: np.ndarray, cache):
    kind = spec.kind
    if kind in CONV_KINDS:
        return _conv_backward(dy, p["W"], cache, spec.stride, 1 if kind == "conv3x3" else 0)
    if kind == "relu":
        return dy * cache, {}
    if kind == "maxpool2x2":
        return _maxpool_backward(dy, cache), {}
    if kind == "gap-head":
        shape = cache
        dX = pooling.gap_backward(dy, shape[2] * shape[3])
        return _from_feature_matrix(dX, shape), {}
    if kind == "gcp-head":
        ctx, shape = cache
        dZ = pooling.devectorize_grad(dy, shape[1])
        return _from_feature_matrix(pooling.gcp_backward(ctx, dZ), shape), {}
    if kind == "dense":
        x = cache
        return dy @ p["W"], {"W": dy.T @ x, "b": dy.sum(axis=0)}
    raise NetworkError(f"unknown layer kind {kind!r}")


# -- loss ------------------------------------------------------------------

def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy and its gradient with respect to the logits."""
    z = logits - logits.max(axis=-1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=-1))
    B = logits.shape[0]
    loss = float(np.mean(logsum - z[np.arange(B), labels]))
    g = softmax(logits)
    g[np.arange(B), labels] -= 1.0
    return loss, g / B


# -- forward / backward ----------------------------------------------------

@dataclass
class ActivationTape:
    inputs: list
    outputs: list
    caches: list
    labels: np.ndarray
    version: int
    loss: float
    dlogits: np.ndarray
    grads: "Gradients | None" = field(default=None, repr=False)

    @property
    def batch_size(self) -> int:
        return len(self.labels)


@dataclass
class Gradients:
    params: list
    input: np.ndarray
    activations: list  # d loss / d (output of layer k)


def _run(net: Network, x: np.ndarray, start: int):
    inputs, outputs, caches = [], [], []
    for k in range(start, len(net.layers)):
        spec = net.layers[k]
        inputs.append(x)
        try:
            x, cache = layer_forward(spec, net.params[k], x)
        except ValueError as exc:
            raise NetworkError(f"layer {k} ({spec.kind}): {exc}") from exc
        outputs.append(x)
        caches.append(cache)
    return inputs, outputs, caches


def _check_activation(net: Network, index: int, x: np.ndarray, batch: int):
    if not 0 <= index < len(net.layers):
        raise NetworkError(f"layer index {index} out of range")
    expected = (batch,) + net.shapes[index]
    if x.shape != expected:
        raise NetworkError(
            f"activation for layer {index} ({net.layers[index].kind}) has shape "
            f"{x.shape}, expected {expected}")


def forward(net: Network, batch: Batch):
    """Run the network; returns ``(logits, loss, tape)``."""
    expected = (batch.images.shape[0],) + net.input_shape
    if batch.images.shape != expected:
        raise NetworkError(f"input has shape {batch.images.shape}, expected {expected}")
    if batch.labels.size and batch.labels.max() >= net.num_classes:
        raise NetworkError("label exceeds class count")
    inputs, outputs, caches = _run(net, batch.images, 0)
    logits = outputs[-1]
    loss, dlogits = cross_entropy(logits, batch.labels)
    tape = ActivationTape(inputs, outputs, caches, batch.labels, net.version, loss, dlogits)
    return logits, loss, tape


def _back(net: Network, caches: list, dlogits: np.ndarray, start: int):
    n = len(net.layers)
    param_grads = [dict() for _ in range(n)]
    act_grads = [None] * n
    dy = dlogits
    for k in range(n - 1, start - 1, -1):
        act_grads[k] = dy
        dy, g = layer_backward(net.layers[k], net.params[k], dy, caches[k - start])
        param_grads[k] = g
    return param_grads, act_grads, dy


def backward(net: Network, tape: ActivationTape) -> Gradients:
    """Gradients of the tape's loss for every parameter, the input and each activation.

    The backward sweep runs once per tape; later calls return the cached result.
    """
    if tape.version != net.version:
        raise StaleTapeError("parameters changed since this tape was recorded")
    if tape.grads is None:
        pg, ag, dx = _back(net, tape.caches, tape.dlogits, 0)
        tape.grads = Gradients(pg, dx, ag)
    return tape.grads


def grad_wrt_activation(net: Network, tape: ActivationTape, index: int) -> np.ndarray:
    if not 0 <= index < len(net.layers):
        raise NetworkError(f"layer index {index} out of range")
    return backward(net, tape).activations[index]


def forward_from(net: Network, tape: ActivationTape, index: int, activation: np.ndarray) -> float:
    """Loss of the layers after ``index`` evaluated on an injected activation."""
    activation = np.asarray(activation, dtype=np.float64)
    _check_activation(net, index, activation, tape.batch_size)
    if index == len(net.layers) - 1:
        return cross_entropy(activation, tape.labels)[0]
    _, outputs, _ = _run(net, activation, index + 1)
    return cross_entropy(outputs[-1], tape.labels)[0]


def loss_and_grad_from(net: Network, tape: ActivationTape, index: int,
                       activation: np.ndarray) -> tuple[float, np.ndarray]:
    """Like :func:`forward_from` but also returns d loss / d activation."""
    activation = np.asarray(activation, dtype=np.float64)
    _check_activation(net, index, activation, tape.batch_size)
    if index == len(net.layers) - 1:
        return cross_entropy(activation, tape.labels)
    _, outputs, caches = _run(net, activation, index + 1)
    loss, dlogits = cross_entropy(outputs[-1], tape.labels)
    _, _, dx = _back(net, caches, dlogits, index + 1)
    return loss, dx


def predict(net: Network, images: np.ndarray, batch_size: int = 256) -> np.ndarray:
    images = np.asarray(images, dtype=np.float64)
    preds = []
    for s in range(0, len(images), batch_size):
        _, outputs, _ = _run(net, images[s:s + batch_size], 0)
        preds.append(np.argmax(outputs[-1], axis=-1))
    return np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)


def count_params_flops(net: Network) -> tuple[int, int]:
    """Parameter count and multiply-accumulate count for one sample.

    Convolutions count ``k^2 Cin Cout Hout Wout``, dense layers ``Din Dout``,
    and the GCP head ``N D^2`` for the covariance plus ``D^3`` for the
    eigendecomposition.  Other layers are treated as free.
    """
    params = 0
    flops = 0
    shape = net.input_shape
    for spec, p, out in zip(net.layers, net.params, net.shapes):
        params += sum(int(v.size) for v in p.values())
        if spec.kind in CONV_KINDS:
            flops += spec.ksize ** 2 * spec.in_channels * spec.out_channels * out[1] * out[2]
        elif spec.kind == "dense":
            flops += spec.in_channels * spec.out_channels
        elif spec.kind == "gcp-head":
            d, n = shape[0], shape[1] * shape[2]
            flops += n * d * d + d ** 3
        shape = out
    return params, flops


# -- checkpoints -----------------------------------------------------------

def save_checkpoint(net: Network, path) -> None:
    """Write an ``.npz`` checkpoint (see README for the layout)."""
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "input_shape": list(net.input_shape),
        "seed": net.seed,
        "layers": [[s.kind, s.in_channels, s.out_channels, s.stride] for s in net.layers],
    }
    arrays = {"header": np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8)}
    for i, p in enumerate(net.params):
        for name, arr in p.items():
            arrays[f"layer{i}_{name}"] = np.ascontiguousarray(arr, dtype="<f8")
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path) -> Network:
    with np.load(path, allow_pickle=False) as data:
        header = json.loads(bytes(data["header"]).decode())
        if header.get("format") != CHECKPOINT_FORMAT:
            raise NetworkError(f"{path}: not a {CHECKPOINT_FORMAT} file")
        if header.get("version") != CHECKPOINT_VERSION:
            raise NetworkError(f"{path}: unsupported checkpoint version {header.get('version')}")
        layers = [LayerSpec(k, ci, co, st) for k, ci, co, st in header["layers"]]
        params = []
        for i, spec in enumerate(layers):
            p = {}
            for name in Network._param_shapes(spec):
                p[name] = np.array(data[f"layer{i}_{name}"], dtype=np.float64)
            params.append(p)
    return Network(layers, tuple(header["input_shape"]), header["seed"], params)
