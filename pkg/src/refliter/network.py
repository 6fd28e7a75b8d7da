"""Iterative gradient-encoding network.

Three sub-networks plus a patch discriminator:

* ``phi``   image encoder, run once per input image
* ``theta`` gradient encoder, run on the gradient image of the previous estimate
* ``psi``   coarse-to-fine reconstruction with two ConvLSTM layers per scale
* ``disc``  four stride-2 convolutions and a one-channel logit head

The estimate at iteration ``t`` is ``psi(phi(I), theta(grad(T_{t-1})))`` with
``T_0 = I``. Only ``theta`` and ``psi`` are re-evaluated per iteration; the
ConvLSTM states carry information between iterations.
"""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ArgumentError, DimensionError, Tensor
from .gradops import gradient

KERNEL = 3


@dataclass
class NetworkConfig:
    base_channels: int = 16
    scales: int = 3
    iterations: int = 4
    lstm_layers_per_scale: int = 2
    detach_gradient_input: bool = False
    disc_channels: tuple = (32, 64, 128, 256)

    def __post_init__(self):
        self.disc_channels = tuple(int(c) for c in self.disc_channels)
        if self.scales != 3:
            raise ArgumentError(f"scales is fixed at 3, got {self.scales}")
        if self.iterations < 1:
            raise ArgumentError(f"iterations must be >= 1, got {self.iterations}")
        if self.base_channels < 1:
            raise ArgumentError(f"base_channels must be >= 1, got {self.base_channels}")
        if self.lstm_layers_per_scale < 1:
            raise ArgumentError(f"lstm_layers_per_scale must be >= 1, got {self.lstm_layers_per_scale}")

    def widths(self):
        return [self.base_channels * 2 ** s for s in range(self.scales)]

    def to_dict(self):
        d = asdict(self)
        d["disc_channels"] = list(self.disc_channels)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


class NetworkState(OrderedDict):
    """Named parameters of all sub-networks, in a fixed creation order."""

    def group(self, prefix):
        return OrderedDict((k, v) for k, v in self.items() if k.split(".", 1)[0] == prefix)

    def generator(self):
        return OrderedDict((k, v) for k, v in self.items() if not k.startswith("disc."))

    def discriminator(self):
        return self.group("disc")

    def astype(self, dtype):
        return NetworkState((k, Tensor(v.data, requires_grad=True, dtype=dtype, name=k)) for k, v in self.items())

    def copy(self):
        return self.astype(next(iter(self.values())).dtype)


def _conv_param(state, rng, name, c_in, c_out, dtype):
    std = np.sqrt(2.0 / (c_in * KERNEL * KERNEL))
    w = rng.standard_normal((c_out, c_in, KERNEL, KERNEL)) * std
    state[name + ".weight"] = Tensor(w, requires_grad=True, dtype=dtype, name=name + ".weight")
    state[name + ".bias"] = Tensor(np.zeros(c_out), requires_grad=True, dtype=dtype, name=name + ".bias")


def _encoder_layout(prefix, c_in, widths):
    # (name, in, out, stride); one stride-2 block per coarser scale
    layers = [(f"{prefix}.s0.conv0", c_in, widths[0], 1), (f"{prefix}.s0.conv1", widths[0], widths[0], 1)]
    for s in range(1, len(widths)):
        layers.append((f"{prefix}.s{s}.down", widths[s - 1], widths[s], 2))
        layers.append((f"{prefix}.s{s}.conv", widths[s], widths[s], 1))
    return layers


def _psi_layout(cfg):
    widths = cfg.widths()
    layers = []
    for s in reversed(range(cfg.scales)):
        coarser = widths[s + 1] if s + 1 < cfg.scales else 0
        layers.append((f"psi.s{s}.mix", widths[s] + coarser, widths[s]))
        c_in = widths[s] * 2
        for layer in range(cfg.lstm_layers_per_scale):
            layers.append((f"psi.s{s}.lstm{layer}", c_in + widths[s], 4 * widths[s]))
            c_in = widths[s]
    layers.append(("psi.out", widths[0], 3))
    return layers


def _disc_layout(cfg):
    layers, c_in = [], 3
    for i, c in enumerate(cfg.disc_channels):
        layers.append((f"disc.conv{i}", c_in, c))
        c_in = c
    layers.append(("disc.head", c_in, 1))
    return layers


def init_params(cfg, seed=0, dtype=np.float32):
    """He-style fan-in initialisation, zero biases; one RNG stream per sub-network."""
    state = NetworkState()
    widths = cfg.widths()
    for k, (prefix, c_in) in enumerate((("phi", 3), ("theta", 9))):
        rng = np.random.default_rng([seed, k])
        for name, ci, co, _ in _encoder_layout(prefix, c_in, widths):
            _conv_param(state, rng, name, ci, co, dtype)
    rng = np.random.default_rng([seed, 2])
    for name, ci, co in _psi_layout(cfg):
        _conv_param(state, rng, name, ci, co, dtype)
    rng = np.random.default_rng([seed, 3])
    for name, ci, co in _disc_layout(cfg):
        _conv_param(state, rng, name, ci, co, dtype)
    return state


def conv_lstm_cell(x, state, weight, bias):
    """One ConvLSTM step; gates i, f, o, g come from a 3x3 conv over concat(x, h)."""
    h, c = state
    if h.shape != c.shape or x.shape[0] != h.shape[0] or x.shape[2:] != h.shape[2:]:
        raise DimensionError(
            f"conv_lstm_cell: input {list(x.shape)} and state {list(h.shape)}/{list(c.shape)} are misaligned"
        )
    gates = ad.conv2d(ad.concat([x, h], axis=1), weight, bias, stride=1, padding=1)
    i, f, o, g = ad.split(gates, 4, axis=1)
    i, f, o, g = ad.sigmoid(i), ad.sigmoid(f), ad.sigmoid(o), ad.tanh(g)
    c_next = ad.add(ad.mul(f, c), ad.mul(i, g))
    h_next = ad.mul(o, ad.tanh(c_next))
    return h_next, (h_next, c_next)


def reflect_pad_to_multiple(image, multiple=4):
    """Reflection-pad the bottom/right borders so H and W are multiples of ``multiple``."""
    n, c, h, w = image.shape
    ph, pw = (-h) % multiple, (-w) % multiple
    if ph == 0 and pw == 0:
        return image, (h, w)
    if ph >= h or pw >= w:
        # reflection needs at least pad+1 pixels; fall back to edge replication
        mode = "edge"
    else:
        mode = "reflect"
    data = np.pad(image.data, ((0, 0), (0, 0), (0, ph), (0, pw)), mode=mode)
    return Tensor(data, dtype=image.dtype), (h, w)


class Network:
    """Parameters plus the forward procedures; keeps encoder call counters."""

    def __init__(self, cfg, params):
        self.cfg = cfg
        self.params = params
        self.encode_image_calls = 0
        self.encode_gradient_calls = 0

    def _conv(self, name, x, stride=1):
        return ad.conv2d(x, self.params[name + ".weight"], self.params[name + ".bias"], stride=stride, padding=1)

    def _encode(self, prefix, x):
        h, w = x.shape[2:]
        if h % 4 or w % 4:
            raise DimensionError(f"{prefix}: spatial size {h}x{w} is not a multiple of 4 (pad first)")
        c_in = 3 if prefix == "phi" else 9
        if x.shape[1] != c_in:
            raise DimensionError(f"{prefix}: expected {c_in} input channels, got {x.shape[1]}")
        levels = []
        for name, _, _, stride in _encoder_layout(prefix, c_in, self.cfg.widths()):
            x = ad.relu(self._conv(name, x, stride))
            if not name.endswith(("conv0", "down")):
                levels.append(x)
        return levels

    def encode_image(self, image):
        self.encode_image_calls += 1
        return self._encode("phi", image)

    def encode_gradient(self, grad_image):
        self.encode_gradient_calls += 1
        return self._encode("theta", grad_image)

    def initial_states(self, img_feats):
        states = {}
        for s, f in enumerate(img_feats):
            for layer in range(self.cfg.lstm_layers_per_scale):
                z = Tensor(np.zeros(f.shape, dtype=f.dtype), dtype=f.dtype)
                states[(s, layer)] = (z, z)
        return states

    def reconstruct_step(self, img_feats, grad_feats, states):
        if len(img_feats) != len(grad_feats) or any(a.shape != b.shape for a, b in zip(img_feats, grad_feats)):
            raise DimensionError(
                "reconstruct_step: image and gradient pyramids differ: "
                f"{[list(a.shape) for a in img_feats]} vs {[list(b.shape) for b in grad_feats]}"
            )
        new_states = {}
        up = None
        for s in reversed(range(self.cfg.scales)):
            mixed = img_feats[s] if up is None else ad.concat([img_feats[s], up], axis=1)
            x = ad.relu(self._conv(f"psi.s{s}.mix", mixed))
            x = ad.concat([x, grad_feats[s]], axis=1)
            for layer in range(self.cfg.lstm_layers_per_scale):
                name = f"psi.s{s}.lstm{layer}"
                x, new_states[(s, layer)] = conv_lstm_cell(
                    x, states[(s, layer)], self.params[name + ".weight"], self.params[name + ".bias"]
                )
            up = ad.upsample_nearest(x, 2) if s > 0 else x
        return ad.sigmoid(self._conv("psi.out", up)), new_states

    def forward(self, image, iterations=None):
        """All estimates T_1..T_T for an image batch; states start from zero."""
        iterations = self.cfg.iterations if iterations is None else iterations
        if iterations < 1:
            raise ArgumentError(f"iterations must be >= 1, got {iterations}")
        padded, (h, w) = reflect_pad_to_multiple(image)
        img_feats = self.encode_image(padded)
        states = self.initial_states(img_feats)
        estimate = padded
        outputs = []
        for _ in range(iterations):
            src = estimate.detach() if self.cfg.detach_gradient_input else estimate
            grad_feats = self.encode_gradient(gradient(src))
            estimate, states = self.reconstruct_step(img_feats, grad_feats, states)
            if estimate.shape[2:] != (h, w):
                outputs.append(estimate[:, :, :h, :w])
            else:
                outputs.append(estimate)
        return outputs

    def discriminate(self, image):
        """Patch logits ``[N, 1, H/16, W/16]`` (no final sigmoid)."""
        x = image
        for i in range(len(self.cfg.disc_channels)):
            x = ad.leaky_relu(self._conv(f"disc.conv{i}", x, stride=2), 0.2)
        return self._conv("disc.head", x)


def forward(image, cfg, params):
    return Network(cfg, params).forward(image)


def discriminate(image, cfg, params):
    return Network(cfg, params).discriminate(image)
