"""Small numpy neural-network engine with per-sample gradients.

Parameters live in one flat float64 vector. Layers are laid out in order,
each contributing its weight tensor (row-major, torch layout) followed by its
bias vector. Everything here is a pure function of its inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

ACTIVATIONS = ("relu", "none")


class ArchError(ValueError):
    """Layer descriptors do not chain or are malformed."""


class NonFiniteError(FloatingPointError):
    """Raised when activations or the loss stop being finite."""

    def __init__(self, layer: str, message: str = "non-finite activation"):
        super().__init__(f"{message} in layer {layer}")
        self.layer = layer


@dataclass(frozen=True)
class Dense:
    in_features: int
    out_features: int
    activation: str = "relu"


@dataclass(frozen=True)
class Conv2d:
    in_channels: int
    out_channels: int
    kernel: int
    padding: int = 0
    activation: str = "relu"


@dataclass(frozen=True)
class MaxPool2d:
    size: int = 2


Layer = Union[Dense, Conv2d, MaxPool2d]


def layer_from_dict(d: dict) -> Layer:
    d = dict(d)
    kind = d.pop("type")
    try:
        cls = {"dense": Dense, "conv2d": Conv2d, "maxpool2d": MaxPool2d}[kind]
    except KeyError:
        raise ArchError(f"unknown layer type {kind!r}") from None
    return cls(**d)


def layer_to_dict(layer: Layer) -> dict:
    kind = {Dense: "dense", Conv2d: "conv2d", MaxPool2d: "maxpool2d"}[type(layer)]
    return {"type": kind, **layer.__dict__}


@dataclass(frozen=True)
class ModelArch:
    """Layer stack over inputs of shape ``(channels, height, width)``.

    Dense layers flatten whatever they receive. The final layer must emit
    ``num_classes`` logits.
    """

    input_shape: tuple[int, int, int]
    layers: tuple[Layer, ...]
    num_classes: int
    _shapes: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "_shapes", self._check())

    def _check(self) -> tuple:
        if len(self.input_shape) != 3 or min(self.input_shape) < 1:
            raise ArchError(f"input shape must be (C, H, W), got {self.input_shape}")
        if not self.layers:
            raise ArchError("architecture has no layers")
        shape = self.input_shape
        shapes = [shape]
        for i, layer in enumerate(self.layers):
            act = getattr(layer, "activation", "none")
            if act not in ACTIVATIONS:
                raise ArchError(f"layer {i}: unknown activation {act!r}")
            if isinstance(layer, Dense):
                n_in = int(np.prod(shape))
                if layer.in_features != n_in:
                    raise ArchError(
                        f"layer {i}: dense expects {layer.in_features} inputs, receives {n_in}")
                shape = (layer.out_features,)
            elif isinstance(layer, Conv2d):
                if len(shape) != 3 or shape[0] != layer.in_channels:
                    raise ArchError(f"layer {i}: conv expects {layer.in_channels} channels, receives {shape}")
                h = shape[1] + 2 * layer.padding - layer.kernel + 1
                w = shape[2] + 2 * layer.padding - layer.kernel + 1
                if h < 1 or w < 1:
                    raise ArchError(f"layer {i}: kernel larger than padded input")
                shape = (layer.out_channels, h, w)
            elif isinstance(layer, MaxPool2d):
                if len(shape) != 3 or shape[1] % layer.size or shape[2] % layer.size:
                    raise ArchError(f"layer {i}: pooling needs spatial dims divisible by {layer.size}")
                shape = (shape[0], shape[1] // layer.size, shape[2] // layer.size)
            else:
                raise ArchError(f"layer {i}: unsupported descriptor {layer!r}")
            shapes.append(shape)
        if shape != (self.num_classes,):
            raise ArchError(f"final layer emits {shape}, expected ({self.num_classes},)")
        return tuple(shapes)

    def param_shapes(self) -> list[tuple[int, tuple, tuple]]:
        """(layer index, weight shape, bias shape) for every parametrised layer."""
        out = []
        for i, layer in enumerate(self.layers):
            if isinstance(layer, Dense):
                out.append((i, (layer.out_features, layer.in_features), (layer.out_features,)))
            elif isinstance(layer, Conv2d):
                k = layer.kernel
                out.append((i, (layer.out_channels, layer.in_channels, k, k), (layer.out_channels,)))
        return out

    @property
    def num_params(self) -> int:
        return sum(int(np.prod(w)) + int(np.prod(b)) for _, w, b in self.param_shapes())

    @property
    def input_size(self) -> int:
        return int(np.prod(self.input_shape))

    def unpack(self, params: np.ndarray) -> dict[int, tuple[np.ndarray, np.ndarray]]:
        """Views of ``params`` keyed by layer index: ``{i: (W, b)}``."""
        params = np.asarray(params)
        if params.shape[-1] != self.num_params:
            raise ArchError(f"parameter vector has length {params.shape[-1]}, arch needs {self.num_params}")
        lead = params.shape[:-1]
        views = {}
        pos = 0
        for i, ws, bs in self.param_shapes():
            nw, nb = int(np.prod(ws)), int(np.prod(bs))
            views[i] = (params[..., pos:pos + nw].reshape(*lead, *ws),
                        params[..., pos + nw:pos + nw + nb].reshape(*lead, *bs))
            pos += nw + nb
        return views

    def offsets(self) -> dict[int, tuple[slice, slice]]:
        """Flat-vector slices of each layer's weight and bias."""
        out = {}
        pos = 0
        for i, ws, bs in self.param_shapes():
            nw, nb = int(np.prod(ws)), int(np.prod(bs))
            out[i] = (slice(pos, pos + nw), slice(pos + nw, pos + nw + nb))
            pos += nw + nb
        return out

    def to_dict(self) -> dict:
        return {"input_shape": list(self.input_shape),
                "layers": [layer_to_dict(l) for l in self.layers],
                "num_classes": self.num_classes}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelArch":
        return cls(tuple(d["input_shape"]), tuple(layer_from_dict(l) for l in d["layers"]),
                   int(d["num_classes"]))


def mlp(input_shape: Sequence[int], hidden: Sequence[int], num_classes: int) -> ModelArch:
    """Fully-connected ReLU network; the output layer has no activation."""
    sizes = [int(np.prod(input_shape)), *hidden, num_classes]
    layers = [Dense(a, b, "relu") for a, b in zip(sizes[:-2], sizes[1:-1])]
    layers.append(Dense(sizes[-2], sizes[-1], "none"))
    return ModelArch(tuple(input_shape), tuple(layers), num_classes)


def desk_mlp(hidden: int = 32) -> ModelArch:
    """The 2-layer reference model on 8x8 grey-scale inputs."""
    return mlp((1, 8, 8), [hidden], 10)


def lenet5(in_channels: int = 3, size: int = 32, num_classes: int = 10) -> ModelArch:
    """LeNet-5 with a padded first convolution.

    On 3x32x32 inputs this variant has 83,126 parameters.
    """
    after1 = size // 2
    after2 = (after1 - 4) // 2
    return ModelArch(
        (in_channels, size, size),
        (Conv2d(in_channels, 6, 5, padding=2), MaxPool2d(2),
         Conv2d(6, 16, 5), MaxPool2d(2),
         Dense(16 * after2 * after2, 120), Dense(120, 84), Dense(84, num_classes, "none")),
        num_classes,
    )


@dataclass(frozen=True)
class Batch:
    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if len(self.inputs) != len(self.labels):
            raise ValueError(f"{len(self.inputs)} inputs but {len(self.labels)} labels")

    def __len__(self):
        return len(self.labels)


def init_model(arch: ModelArch, seed: int) -> np.ndarray:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every weight and bias."""
    rng = np.random.default_rng(seed)
    chunks = []
    for _, ws, bs in arch.param_shapes():
        fan_in = int(np.prod(ws[1:]))
        bound = 1.0 / np.sqrt(fan_in)
        chunks.append(rng.uniform(-bound, bound, size=int(np.prod(ws))))
        chunks.append(rng.uniform(-bound, bound, size=int(np.prod(bs))))
    return np.concatenate(chunks)


def apply_step(params: np.ndarray, update: np.ndarray, lr: float) -> np.ndarray:
    params = np.asarray(params, dtype=np.float64)
    update = np.asarray(update, dtype=np.float64)
    if params.shape != update.shape:
        raise ValueError(f"update shape {update.shape} does not match params {params.shape}")
    return params - lr * update


# --- layer kernels -------------------------------------------------------------

def _im2col(x, k, pad):
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, (k, k), axis=(2, 3))  # B, C, Ho, Wo, k, k
    b, c, ho, wo = win.shape[:4]
    cols = win.transpose(0, 1, 4, 5, 2, 3).reshape(b, c * k * k, ho * wo)
    return cols, (ho, wo)


def _col2im(cols, x_shape, k, pad, out_hw):
    b, c, h, w = x_shape
    ho, wo = out_hw
    cols = cols.reshape(b, c, k, k, ho, wo)
    out = np.zeros((b, c, h + 2 * pad, w + 2 * pad))
    for i in range(k):
        for j in range(k):
            out[:, :, i:i + ho, j:j + wo] += cols[:, :, i, j]
    if pad:
        out = out[:, :, pad:-pad, pad:-pad]
    return out


def _forward(arch: ModelArch, params: np.ndarray, x: np.ndarray):
    # overflow is detected explicitly below and reported with the layer
    with np.errstate(over="ignore", invalid="ignore"):
        return _forward_layers(arch, params, x)


def _forward_layers(arch, params, x):
    views = arch.unpack(params)
    caches = []
    h = x.reshape(len(x), *arch.input_shape).astype(np.float64, copy=False)
    for i, layer in enumerate(arch.layers):
        if isinstance(layer, Dense):
            inp = h.reshape(len(h), -1)
            w, b = views[i]
            z = inp @ w.T + b
            cache = (inp, h.shape)
        elif isinstance(layer, Conv2d):
            w, b = views[i]
            cols, hw = _im2col(h, layer.kernel, layer.padding)
            z = np.einsum("ok,bkl->bol", w.reshape(w.shape[0], -1), cols) + b[:, None]
            cache = (cols, h.shape, hw)
            z = z.reshape(len(h), w.shape[0], *hw)
        else:
            s = layer.size
            bsz, c, hh, ww = h.shape
            blocks = h.reshape(bsz, c, hh // s, s, ww // s, s).transpose(0, 1, 2, 4, 3, 5)
            blocks = blocks.reshape(bsz, c, hh // s, ww // s, s * s)
            idx = blocks.argmax(axis=-1)
            z = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
            cache = (idx, h.shape)
        if getattr(layer, "activation", "none") == "relu":
            mask = z > 0
            z = z * mask
        else:
            mask = None
        if not np.all(np.isfinite(z)):
            raise NonFiniteError(f"{i} ({type(layer).__name__})")
        caches.append((cache, mask))
        h = z
    return h, caches


def _softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def logits(arch: ModelArch, params: np.ndarray, inputs: np.ndarray) -> np.ndarray:
    return _forward(arch, params, np.asarray(inputs))[0]


def accuracy(arch: ModelArch, params: np.ndarray, inputs: np.ndarray, labels: np.ndarray,
             chunk: int = 2048) -> float:
    hits = 0
    for s in range(0, len(labels), chunk):
        pred = logits(arch, params, inputs[s:s + chunk]).argmax(axis=1)
        hits += int((pred == labels[s:s + chunk]).sum())
    return hits / len(labels)


def _backward(arch, params, caches, gout, per_sample):
    """Backprop ``gout`` (d loss_s / d logits, one row per sample)."""
    views = arch.unpack(params)
    offsets = arch.offsets()
    bsz = len(gout)
    grads = np.zeros((bsz, arch.num_params)) if per_sample else np.zeros(arch.num_params)
    g = gout
    for i in range(len(arch.layers) - 1, -1, -1):
        layer = arch.layers[i]
        cache, mask = caches[i]
        if mask is not None:
            g = g * mask
        if isinstance(layer, Dense):
            inp, in_shape = cache
            w, _ = views[i]
            sw, sb = offsets[i]
            if per_sample:
                grads[:, sw] = np.einsum("bo,bi->boi", g, inp).reshape(bsz, -1)
                grads[:, sb] = g
            else:
                grads[sw] = (g.T @ inp).ravel()
                grads[sb] = g.sum(axis=0)
            if i:
                g = (g @ w).reshape(in_shape)
        elif isinstance(layer, Conv2d):
            cols, in_shape, hw = cache
            w, _ = views[i]
            sw, sb = offsets[i]
            g2 = g.reshape(bsz, w.shape[0], -1)
            if per_sample:
                grads[:, sw] = np.einsum("bol,bkl->bok", g2, cols).reshape(bsz, -1)
                grads[:, sb] = g2.sum(axis=2)
            else:
                grads[sw] = np.einsum("bol,bkl->ok", g2, cols).ravel()
                grads[sb] = g2.sum(axis=(0, 2))
            if i:
                gcols = np.einsum("ok,bol->bkl", w.reshape(w.shape[0], -1), g2)
                g = _col2im(gcols, in_shape, layer.kernel, layer.padding, hw)
        else:
            idx, in_shape = cache
            s = layer.size
            b_, c, hh, ww = in_shape
            blocks = np.zeros((b_, c, hh // s, ww // s, s * s))
            np.put_along_axis(blocks, idx[..., None], g[..., None], axis=-1)
            g = blocks.reshape(b_, c, hh // s, ww // s, s, s).transpose(0, 1, 2, 4, 3, 5)
            g = g.reshape(in_shape)
    return grads


def _loss_terms(arch, params, batch):
    if len(batch) == 0:
        raise ValueError("empty batch")
    labels = np.asarray(batch.labels)
    if labels.min() < 0 or labels.max() >= arch.num_classes:
        raise ValueError("label outside class range")
    out, caches = _forward(arch, params, np.asarray(batch.inputs))
    p = _softmax(out)
    idx = np.arange(len(labels))
    losses = -np.log(np.clip(p[idx, labels], 1e-300, None))
    if not np.all(np.isfinite(losses)):
        raise NonFiniteError("loss", "non-finite loss")
    gout = p
    gout[idx, labels] -= 1.0
    return losses, gout, caches


def loss_and_per_sample_gradients(arch: ModelArch, params: np.ndarray, batch: Batch):
    """Mean cross-entropy and the ``(B, |w|)`` matrix of per-sample gradients."""
    losses, gout, caches = _loss_terms(arch, params, batch)
    return float(losses.mean()), _backward(arch, params, caches, gout, per_sample=True)


def loss_and_gradient(arch: ModelArch, params: np.ndarray, batch: Batch):
    """Mean cross-entropy and its gradient, without materialising per-sample terms."""
    losses, gout, caches = _loss_terms(arch, params, batch)
    return float(losses.mean()), _backward(arch, params, caches, gout / len(gout), per_sample=False)


def loss(arch: ModelArch, params: np.ndarray, batch: Batch) -> float:
    out, _ = _forward(arch, params, np.asarray(batch.inputs))
    p = _softmax(out)
    labels = np.asarray(batch.labels)
    return float(-np.log(p[np.arange(len(labels)), labels]).mean())
