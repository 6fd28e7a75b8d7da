"""Training losses: L1, perceptual, feature co-occurrence (Gram), adversarial."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ArgumentError, DimensionError, Tensor

COMPONENTS = ("l1", "perceptual", "cooccurrence", "adversarial")


class NonFiniteLossError(FloatingPointError):
    """A loss component became NaN or infinite; training must stop."""

    def __init__(self, component, value, report=None):
        super().__init__(f"non-finite {component} loss: {value}")
        self.component = component
        self.report = report


@dataclass
class LossWeights:
    perceptual: float = 0.1  # lambda_1
    cooccurrence: float = 0.1  # lambda_2
    adversarial: float = 0.5  # lambda_3

    def __post_init__(self):
        for k, v in self.as_dict().items():
            if v < 0:
                raise ArgumentError(f"loss weight {k} must be >= 0, got {v}")

    def as_dict(self):
        return {"perceptual": self.perceptual, "cooccurrence": self.cooccurrence, "adversarial": self.adversarial}


@dataclass
class LossReport:
    l1: float
    perceptual: float
    cooccurrence: float
    adversarial: float
    total: float

    def row(self):
        return [self.l1, self.perceptual, self.cooccurrence, self.adversarial, self.total]


class FeatureExtractor:
    """Fixed conv+relu stack with a tap after each block.

    Block 1 keeps full resolution; later blocks downsample by 2. Default
    weights are seeded random matrices with orthonormal rows (of the
    flattened ``C_in*3*3`` fan-in), so the extractor is deterministic and
    needs no download. Weights never receive gradients.
    """

    def __init__(self, channels=(16, 32, 64), seed=1234, weights=None, taps=(1, 2, 3), dtype=np.float32):
        self.channels = tuple(channels)
        self.taps = tuple(taps)
        if not self.taps or any(t < 1 or t > len(self.channels) for t in self.taps):
            raise ArgumentError(f"tap layers must lie in 1..{len(self.channels)}, got {self.taps}")
        self.strides = tuple(1 if i == 0 else 2 for i in range(len(self.channels)))
        self.weights = []
        if weights is None:
            rng = np.random.default_rng(seed)
            c_in = 3
            for c_out in self.channels:
                fan_in = c_in * 9
                a = rng.standard_normal((max(fan_in, c_out), min(fan_in, c_out)))
                q, r = np.linalg.qr(a)
                q = q * np.sign(np.diag(r))
                w = (q.T if fan_in >= c_out else q)[:c_out, :fan_in]
                self.weights.append((w.reshape(c_out, c_in, 3, 3), np.zeros(c_out)))
                c_in = c_out
        else:
            self.weights = [(np.asarray(w), np.asarray(b)) for w, b in weights]
            if len(self.weights) != len(self.channels):
                raise ArgumentError(f"expected {len(self.channels)} feature blocks, got {len(self.weights)}")
        self._cache = {}

    def _params(self, dtype):
        key = np.dtype(dtype)
        if key not in self._cache:
            self._cache[key] = [(Tensor(w, dtype=key), Tensor(b, dtype=key)) for w, b in self.weights]
        return self._cache[key]

    def named_weights(self):
        out = {}
        for i, (w, b) in enumerate(self.weights):
            out[f"zeta.block{i + 1}.weight"] = w
            out[f"zeta.block{i + 1}.bias"] = b
        return out

    @classmethod
    def from_named(cls, tensors, taps=(1, 2, 3)):
        blocks = []
        i = 1
        while f"zeta.block{i}.weight" in tensors:
            blocks.append((tensors[f"zeta.block{i}.weight"], tensors[f"zeta.block{i}.bias"]))
            i += 1
        if not blocks:
            raise ArgumentError("feature file holds no zeta.block*.weight tensors")
        channels = [w.shape[0] for w, _ in blocks]
        return cls(channels=channels, weights=blocks, taps=taps)

    def __call__(self, image):
        """Features at the tap layers, each ``[N, C_l, H_l, W_l]``."""
        feats = []
        x = image
        for i, ((w, b), stride) in enumerate(zip(self._params(image.dtype), self.strides)):
            x = ad.relu(ad.conv2d(x, w, b, stride=stride, padding=1))
            if i + 1 in self.taps:
                feats.append(x)
            if i + 1 >= max(self.taps):
                break
        return feats


def _check(op, a, b):
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shapes {list(a.shape)} and {list(b.shape)} differ")


def gram(features, normalize=True):
    """``F F^T`` over the last two axes, divided by ``n*m`` when ``normalize``.

    Accepts ``[n, m]`` or batched ``[N, n, m]``.
    """
    n, m = features.shape[-2:]
    g = ad.matmul(features, ad.transpose(features))
    return ad.scale(g, 1.0 / (n * m)) if normalize else g


def _flatten(feat):
    n, c, h, w = feat.shape
    return ad.reshape(feat, (n, c, h * w))


def cooccurrence_loss(estimate, target, extractor, normalize=True, target_feats=None, est_feats=None):
    """Sum over tap layers of the squared Frobenius distance between Gram matrices.

    Averaged over the batch. Gradients flow to ``estimate`` only.
    """
    _check("cooccurrence_loss", estimate, target)
    est_feats = extractor(estimate) if est_feats is None else est_feats
    if target_feats is None:
        with ad.no_grad():
            target_feats = extractor(target.detach())
    n_batch = estimate.shape[0]
    total = None
    for fe, ft in zip(est_feats, target_feats):
        ge = gram(_flatten(fe), normalize)
        gt = gram(_flatten(ft.detach()), normalize)
        term = ad.scale(ad.sum_all(ad.square(ad.sub(ge, gt))), 1.0 / n_batch)
        total = term if total is None else ad.add(total, term)
    return total


def l1_loss(estimate, target):
    _check("l1_loss", estimate, target)
    return ad.mean_all(ad.absolute(ad.sub(estimate, target.detach())))


def perceptual_loss(estimate, target, extractor, target_feats=None, est_feats=None):
    """Sum over tap layers of the mean absolute feature difference."""
    _check("perceptual_loss", estimate, target)
    est_feats = extractor(estimate) if est_feats is None else est_feats
    if target_feats is None:
        with ad.no_grad():
            target_feats = extractor(target.detach())
    total = None
    for fe, ft in zip(est_feats, target_feats):
        term = ad.mean_all(ad.absolute(ad.sub(fe, ft.detach())))
        total = term if total is None else ad.add(total, term)
    return total


def generator_adversarial_loss(d_fake):
    return ad.mean_all(ad.softplus(ad.scale(d_fake, -1.0)))


def discriminator_loss(d_real, d_fake):
    real = ad.mean_all(ad.softplus(ad.scale(d_real, -1.0)))
    fake = ad.mean_all(ad.softplus(d_fake))
    return ad.add(real, fake)


def adversarial_losses(d_real, d_fake):
    """Non-saturating logistic GAN losses: ``(generator_loss, discriminator_loss)``."""
    return generator_adversarial_loss(d_fake), discriminator_loss(d_real, d_fake)


def _value(x):
    return x.item() if isinstance(x, Tensor) else float(x)


def total_loss(components, weights):
    """``l1 + w_p*perceptual + w_f*cooccurrence + w_adv*adversarial``.

    ``components`` maps names to tensors or plain floats; terms with zero
    weight (or given as floats) do not enter the graph.
    """
    for name in COMPONENTS:
        v = _value(components[name])
        if not math.isfinite(v):
            raise NonFiniteLossError(name, v)
    w = {"l1": 1.0, **weights.as_dict()}
    total = None
    const = 0.0
    for name in COMPONENTS:
        c = components[name]
        if w[name] == 0:
            continue
        if isinstance(c, Tensor):
            term = c if w[name] == 1.0 else ad.scale(c, w[name])
            total = term if total is None else ad.add(total, term)
        else:
            const += w[name] * float(c)
    if total is None:
        return Tensor(np.asarray(const))
    if const:
        total = ad.add(total, Tensor(np.asarray(const, dtype=total.dtype), dtype=total.dtype))
    return total


def report(components, total):
    return LossReport(*(_value(components[n]) for n in COMPONENTS), total=_value(total))
