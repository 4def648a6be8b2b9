"""Convolutional encoder with an explicit parameter store and normalization
state, plus a two-layer projection head.

Everything is functional: layers hold only hyperparameters and names, while
weights live in a ``{name: ndarray}`` dict and batch-norm running statistics
in a separate state dict. ``Encoder.forward`` returns updated state instead
of mutating anything, which is what lets the dual-branch trainer run one
weight store against two independent normalization states.

Layout is NHWC throughout; convolution weights are stored as
(kh*kw*cin, cout) matrices operating on im2col patch rows.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import backend
from .errors import ContractError, InvalidSpecError

BN_MOMENTUM = 0.1
BN_EPS = 1e-5


class Conv2d:
    def __init__(self, name, cin, cout, ksize=3, stride=1, pad=1):
        self.name = name
        self.cin, self.cout = cin, cout
        self.k, self.stride, self.pad = ksize, stride, pad

    def param_shapes(self):
        return {f"{self.name}.weight": (self.k * self.k * self.cin, self.cout)}

    def init_params(self, rng, dtype):
        fan_in = self.k * self.k * self.cin
        w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, self.cout))
        return {f"{self.name}.weight": w.astype(dtype)}

    def forward(self, x, params, state, mode, caches, state_out):
        n, h, w, c = x.shape
        if c != self.cin:
            raise ContractError(f"{self.name}: expected {self.cin} channels, got {c}")
        oh = (h + 2 * self.pad - self.k) // self.stride + 1
        ow = (w + 2 * self.pad - self.k) // self.stride + 1
        cols = backend.im2col(x, self.k, self.k, self.stride, self.stride,
                              self.pad, self.pad)
        y = cols @ params[f"{self.name}.weight"]
        caches.append((cols, (n, h, w, c)))
        return y.reshape(n, oh, ow, self.cout)

    def backward(self, dy, params, caches, grads):
        cols, (n, h, w, c) = caches.pop()
        dy2 = dy.reshape(-1, self.cout)
        grads[f"{self.name}.weight"] = cols.T @ dy2
        dcols = dy2 @ params[f"{self.name}.weight"].T
        return backend.col2im(dcols, n, h, w, c, self.k, self.k,
                              self.stride, self.stride, self.pad, self.pad)


class BatchNorm2d:
    def __init__(self, name, channels):
        self.name = name
        self.c = channels

    def param_shapes(self):
        return {f"{self.name}.gamma": (self.c,), f"{self.name}.beta": (self.c,)}

    def init_params(self, rng, dtype):
        return {
            f"{self.name}.gamma": np.ones(self.c, dtype=dtype),
            f"{self.name}.beta": np.zeros(self.c, dtype=dtype),
        }

    def state_shapes(self):
        return {f"{self.name}.running_mean": (self.c,),
                f"{self.name}.running_var": (self.c,)}

    def init_state(self, dtype):
        return {
            f"{self.name}.running_mean": np.zeros(self.c, dtype=dtype),
            f"{self.name}.running_var": np.ones(self.c, dtype=dtype),
        }

    def forward(self, x, params, state, mode, caches, state_out):
        gamma = params[f"{self.name}.gamma"]
        beta = params[f"{self.name}.beta"]
        n_eff = x.shape[0] * x.shape[1] * x.shape[2]
        if mode == "train":
            # single-pass moments with float64 accumulation
            mean = np.einsum("nhwc->c", x, dtype=np.float64) / n_eff
            sq = np.einsum("nhwc,nhwc->c", x, x, dtype=np.float64) / n_eff
            var = np.maximum(sq - mean * mean, 0.0)
            mean = mean.astype(x.dtype)
            var = var.astype(x.dtype)
            unbiased = var * (n_eff / max(n_eff - 1, 1))
            m = BN_MOMENTUM
            state_out[f"{self.name}.running_mean"] = (
                (1 - m) * state[f"{self.name}.running_mean"] + m * mean
            ).astype(x.dtype)
            state_out[f"{self.name}.running_var"] = (
                (1 - m) * state[f"{self.name}.running_var"] + m * unbiased
            ).astype(x.dtype)
        else:
            mean = state[f"{self.name}.running_mean"]
            var = state[f"{self.name}.running_var"]
        inv_std = (1.0 / np.sqrt(var + BN_EPS)).astype(x.dtype)
        # y = x*a + b, folding normalization and affine into one pass
        a = gamma * inv_std
        b = beta - mean * a
        y = x * a
        y += b
        caches.append((x, mean, inv_std, mode))
        return y

    def backward(self, dy, params, caches, grads):
        x, mean, inv_std, mode = caches.pop()
        gamma = params[f"{self.name}.gamma"]
        n_eff = dy.shape[0] * dy.shape[1] * dy.shape[2]
        s1 = np.einsum("nhwc->c", dy, dtype=np.float64)
        sxy = np.einsum("nhwc,nhwc->c", dy, x, dtype=np.float64)
        dgamma = ((sxy - mean.astype(np.float64) * s1)
                  * inv_std.astype(np.float64)).astype(x.dtype)
        s1 = s1.astype(x.dtype)
        grads[f"{self.name}.gamma"] = dgamma
        grads[f"{self.name}.beta"] = s1
        a = gamma * inv_std
        if mode != "train":
            return dy * a
        # dx = a*dy + c*x + d, collapsing the batch-stat terms per channel
        c = -a * inv_std * dgamma / n_eff
        d = -a * s1 / n_eff - c * mean
        dx = dy * a
        dx += x * c
        dx += d
        return dx


class ReLU:
    def __init__(self, name):
        self.name = name

    def forward(self, x, params, state, mode, caches, state_out):
        mask = x > 0
        caches.append(mask)
        return x * mask

    def backward(self, dy, params, caches, grads):
        return dy * caches.pop()


class MaxPool2:
    """2x2 max pooling with stride 2; spatial dims must be even."""

    def __init__(self, name):
        self.name = name

    def forward(self, x, params, state, mode, caches, state_out):
        n, h, w, c = x.shape
        if h % 2 or w % 2:
            raise ContractError(f"{self.name}: spatial dims must be even, got {h}x{w}")
        view = x.reshape(n, h // 2, 2, w // 2, 2, c)
        y = view.max(axis=(2, 4))
        sel = view == y[:, :, None, :, None, :]
        caches.append((sel, (n, h, w, c)))
        return y

    def backward(self, dy, params, caches, grads):
        sel, (n, h, w, c) = caches.pop()
        dx = sel * dy[:, :, None, :, None, :]
        return dx.reshape(n, h, w, c)


class GlobalAvgPool:
    def __init__(self, name):
        self.name = name

    def forward(self, x, params, state, mode, caches, state_out):
        caches.append(x.shape)
        return x.mean(axis=(1, 2))

    def backward(self, dy, params, caches, grads):
        n, h, w, c = caches.pop()
        return np.broadcast_to(dy[:, None, None, :] / (h * w), (n, h, w, c)).copy()


class Dense:
    def __init__(self, name, cin, cout, bias=True):
        self.name = name
        self.cin, self.cout = cin, cout
        self.bias = bias

    def param_shapes(self):
        shapes = {f"{self.name}.weight": (self.cin, self.cout)}
        if self.bias:
            shapes[f"{self.name}.bias"] = (self.cout,)
        return shapes

    def init_params(self, rng, dtype):
        w = rng.normal(0.0, np.sqrt(2.0 / self.cin), size=(self.cin, self.cout))
        out = {f"{self.name}.weight": w.astype(dtype)}
        if self.bias:
            out[f"{self.name}.bias"] = np.zeros(self.cout, dtype=dtype)
        return out

    def forward(self, x, params, state, mode, caches, state_out):
        if x.shape[1] != self.cin:
            raise ContractError(f"{self.name}: expected dim {self.cin}, got {x.shape[1]}")
        caches.append(x)
        y = x @ params[f"{self.name}.weight"]
        if self.bias:
            y = y + params[f"{self.name}.bias"]
        return y

    def backward(self, dy, params, caches, grads):
        x = caches.pop()
        grads[f"{self.name}.weight"] = x.T @ dy
        if self.bias:
            grads[f"{self.name}.bias"] = dy.sum(axis=0)
        return dy @ params[f"{self.name}.weight"].T


class L2Normalize:
    def __init__(self, name):
        self.name = name

    def forward(self, x, params, state, mode, caches, state_out):
        norm = np.maximum(np.linalg.norm(x, axis=1, keepdims=True), 1e-12)
        y = x / norm
        caches.append((y, norm))
        return y

    def backward(self, dy, params, caches, grads):
        y, norm = caches.pop()
        return (dy - y * (dy * y).sum(axis=1, keepdims=True)) / norm


class Residual:
    """y = main(x) + shortcut(x); identity shortcut when none is given."""

    def __init__(self, name, main, shortcut=None):
        self.name = name
        self.main = main
        self.shortcut = shortcut or []

    def sublayers(self):
        return list(self.main) + list(self.shortcut)

    def param_shapes(self):
        out = {}
        for lyr in self.sublayers():
            out.update(getattr(lyr, "param_shapes", dict)())
        return out

    def init_params(self, rng, dtype):
        out = {}
        for lyr in self.sublayers():
            if hasattr(lyr, "init_params"):
                out.update(lyr.init_params(rng, dtype))
        return out

    def state_shapes(self):
        out = {}
        for lyr in self.sublayers():
            if hasattr(lyr, "state_shapes"):
                out.update(lyr.state_shapes())
        return out

    def init_state(self, dtype):
        out = {}
        for lyr in self.sublayers():
            if hasattr(lyr, "init_state"):
                out.update(lyr.init_state(dtype))
        return out

    def forward(self, x, params, state, mode, caches, state_out):
        main_caches = []
        y = x
        for lyr in self.main:
            y = lyr.forward(y, params, state, mode, main_caches, state_out)
        short_caches = []
        if self.shortcut:
            s = x
            for lyr in self.shortcut:
                s = lyr.forward(s, params, state, mode, short_caches, state_out)
        else:
            s = x
        caches.append((main_caches, short_caches))
        return y + s

    def backward(self, dy, params, caches, grads):
        main_caches, short_caches = caches.pop()
        dx_main = dy
        for lyr in reversed(self.main):
            dx_main = lyr.backward(dx_main, params, main_caches, grads)
        if self.shortcut:
            dx_short = dy
            for lyr in reversed(self.shortcut):
                dx_short = lyr.backward(dx_short, params, short_caches, grads)
        else:
            dx_short = dy
        return dx_main + dx_short


@dataclass(frozen=True)
class EncoderSpec:
    """Architecture description for the backbone and projection head."""

    arch: str = "small4"
    in_channels: int = 3
    image_size: int = 32
    channels: tuple = (16, 32, 64, 128)
    proj_hidden: int = 128
    proj_dim: int = 64

    def __post_init__(self):
        if self.arch not in ("small4", "resnet18"):
            raise InvalidSpecError(f"unknown encoder arch {self.arch!r}")
        if self.arch == "small4":
            if len(self.channels) != 4:
                raise InvalidSpecError("small4 needs exactly 4 channel sizes")
            if self.image_size % 16:
                raise InvalidSpecError("small4 needs image_size divisible by 16")
        if self.arch == "resnet18" and self.image_size % 8:
            raise InvalidSpecError("resnet18 needs image_size divisible by 8")

    @property
    def feature_dim(self):
        if self.arch == "small4":
            return self.channels[-1]
        return 512

    def to_dict(self):
        return {
            "arch": self.arch, "in_channels": self.in_channels,
            "image_size": self.image_size, "channels": list(self.channels),
            "proj_hidden": self.proj_hidden, "proj_dim": self.proj_dim,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "channels" in d:
            d["channels"] = tuple(d["channels"])
        return cls(**d)


@dataclass
class EncodeResult:
    features: np.ndarray
    projections: np.ndarray
    norm_state: dict
    cache: list = field(default_factory=list)


def _small4(spec):
    layers = []
    cin = spec.in_channels
    for i, c in enumerate(spec.channels, start=1):
        layers += [
            Conv2d(f"b{i}.conv", cin, c),
            BatchNorm2d(f"b{i}.bn", c),
            ReLU(f"b{i}.relu"),
            MaxPool2(f"b{i}.pool"),
        ]
        cin = c
    layers.append(GlobalAvgPool("gap"))
    return layers


def _basic_block(name, cin, cout, stride):
    main = [
        Conv2d(f"{name}.conv1", cin, cout, 3, stride, 1),
        BatchNorm2d(f"{name}.bn1", cout),
        ReLU(f"{name}.relu1"),
        Conv2d(f"{name}.conv2", cout, cout, 3, 1, 1),
        BatchNorm2d(f"{name}.bn2", cout),
    ]
    shortcut = None
    if stride != 1 or cin != cout:
        shortcut = [
            Conv2d(f"{name}.down.conv", cin, cout, 1, stride, 0),
            BatchNorm2d(f"{name}.down.bn", cout),
        ]
    return [Residual(name, main, shortcut), ReLU(f"{name}.relu2")]


def _resnet18(spec):
    layers = [
        Conv2d("stem.conv", spec.in_channels, 64),
        BatchNorm2d("stem.bn", 64),
        ReLU("stem.relu"),
    ]
    cin = 64
    for si, (cout, stride) in enumerate([(64, 1), (128, 2), (256, 2), (512, 2)], 1):
        layers += _basic_block(f"s{si}a", cin, cout, stride)
        layers += _basic_block(f"s{si}b", cout, cout, 1)
        cin = cout
    layers.append(GlobalAvgPool("gap"))
    return layers


def _head(spec):
    return [
        Dense("head.fc1", spec.feature_dim, spec.proj_hidden),
        ReLU("head.relu"),
        Dense("head.fc2", spec.proj_hidden, spec.proj_dim),
        L2Normalize("head.norm"),
    ]


class Encoder:
    """Backbone plus projection head over explicit param/state dicts."""

    def __init__(self, spec: EncoderSpec):
        self.spec = spec
        builder = _small4 if spec.arch == "small4" else _resnet18
        self.backbone = builder(spec)
        self.head = _head(spec)
        n_norm = sum(1 for lyr in self._walk() if isinstance(lyr, BatchNorm2d))
        if n_norm < 2:
            raise InvalidSpecError("encoder needs at least 2 normalization layers")

    def _walk(self):
        for lyr in self.backbone + self.head:
            if isinstance(lyr, Residual):
                yield from lyr.sublayers()
            else:
                yield lyr

    # -- parameter and state plumbing ------------------------------------

    def param_shapes(self):
        out = {}
        for lyr in self.backbone + self.head:
            if hasattr(lyr, "param_shapes"):
                out.update(lyr.param_shapes())
        return out

    def init_params(self, rng, dtype=np.float32):
        out = {}
        for lyr in self.backbone + self.head:
            if hasattr(lyr, "init_params"):
                out.update(lyr.init_params(rng, dtype))
        return out

    def init_norm_state(self, dtype=np.float32):
        out = {}
        for lyr in self.backbone + self.head:
            if hasattr(lyr, "init_state"):
                out.update(lyr.init_state(dtype))
        return out

    def backbone_keys(self):
        out = []
        for lyr in self.backbone:
            if hasattr(lyr, "param_shapes"):
                out.extend(lyr.param_shapes())
        return out

    def head_keys(self):
        out = []
        for lyr in self.head:
            if hasattr(lyr, "param_shapes"):
                out.extend(lyr.param_shapes())
        return out

    def prunable_keys(self, include_head=False):
        """Conv/dense weight matrices in feed-forward order.

        Normalization parameters and biases are never prunable; the
        projection head only when explicitly requested.
        """
        keys = [k for k in self.backbone_keys() if k.endswith(".weight")]
        if include_head:
            keys += [k for k in self.head_keys() if k.endswith(".weight")]
        return keys

    # -- execution --------------------------------------------------------

    def forward(self, params, norm_state, x, mode="train", want_cache=False):
        if mode not in ("train", "eval"):
            raise ContractError(f"mode must be train|eval, got {mode!r}")
        x = np.asarray(x)
        if x.ndim != 4 or x.shape[3] != self.spec.in_channels:
            raise ContractError(
                f"expected (N,H,W,{self.spec.in_channels}) batch, got {x.shape}"
            )
        new_state = dict(norm_state)
        caches = [] if want_cache else None
        sink = caches if want_cache else []
        y = x
        boundary = None
        for lyr in self.backbone:
            y = lyr.forward(y, params, norm_state, mode, sink, new_state)
            if not want_cache:
                sink.clear()
        features = y
        if want_cache:
            boundary = len(sink)
        for lyr in self.head:
            y = lyr.forward(y, params, norm_state, mode, sink, new_state)
            if not want_cache:
                sink.clear()
        return EncodeResult(features=features, projections=y,
                            norm_state=new_state,
                            cache=[sink, boundary] if want_cache else [])

    def backward(self, dproj, result, params):
        """Gradients of a scalar loss w.r.t. params, given d loss/d projections."""
        if not result.cache:
            raise ContractError("forward was run without want_cache=True")
        caches, _ = result.cache
        grads = {}
        dy = dproj
        for lyr in reversed(self.backbone + self.head):
            dy = lyr.backward(dy, params, caches, grads)
        return grads

    def encode(self, params, norm_state, images, mode="train"):
        """(features, unit-normalized projections, updated norm state)."""
        res = self.forward(params, norm_state, images, mode, want_cache=False)
        return res.features, res.projections, res.norm_state
