"""Adam optimisation with alternating discriminator / generator updates."""
from __future__ import annotations

import contextlib
import csv
import logging
import math
from collections import OrderedDict
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from . import checkpoint as ckpt_io
from . import kernels
from .autodiff import ArgumentError, Tensor
from .checkpoint import Checkpoint, CheckpointError, OptimizerState
from .losses import (
    COMPONENTS,
    FeatureExtractor,
    LossWeights,
    NonFiniteLossError,
    cooccurrence_loss,
    discriminator_loss,
    generator_adversarial_loss,
    l1_loss,
    perceptual_loss,
    report,
    total_loss,
)
from .network import Network, NetworkConfig, NetworkState, init_params

log = logging.getLogger(__name__)


class NonFiniteGradientError(FloatingPointError):
    def __init__(self, name):
        super().__init__(f"non-finite gradient for parameter {name}")
        self.name = name


LR_SCHEDULES = ("constant", "cosine")


@dataclass
class TrainConfig:
    batch_size: int = 4
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    steps: int = 1000
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    loss_on_all_iterates: bool = False
    use_discriminator: bool = True
    gram_normalize: bool = True
    disc_lr: float | None = None  # None: same as lr
    lr_schedule: str = "constant"  # or "cosine": decay to lr_floor * lr over `steps`
    lr_floor: float = 0.0
    flush_denormals: bool = True  # subnormals to zero during steps; see kernels.flush_denormals

    def __post_init__(self):
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        if self.batch_size < 1:
            raise ArgumentError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.lr > 0:
            raise ArgumentError(f"lr must be > 0, got {self.lr}")
        if self.disc_lr is not None and not self.disc_lr > 0:
            raise ArgumentError(f"disc_lr must be > 0, got {self.disc_lr}")
        if self.lr_schedule not in LR_SCHEDULES:
            raise ArgumentError(f"lr_schedule must be one of {LR_SCHEDULES}, got {self.lr_schedule!r}")
        if not 0.0 <= self.lr_floor <= 1.0:
            raise ArgumentError(f"lr_floor must be in [0, 1], got {self.lr_floor}")
        if self.steps < 0:
            raise ArgumentError(f"steps must be >= 0, got {self.steps}")

    def to_dict(self):
        return asdict(self)


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update, in place on ``params`` and ``state``.

    ``params`` maps names to tensors, ``grads`` names to arrays (a missing
    entry counts as a zero gradient). Raises NonFiniteGradientError before
    touching anything if a gradient holds NaN/inf.
    """
    for name in params:
        g = grads.get(name)
        if g is not None and not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(name)
    state.t += 1
    t = state.t
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for name, p in params.items():
        dt = p.data.dtype
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m = state.m[name] = dt.type(beta1) * state.m[name] + dt.type(1 - beta1) * g
        v = state.v[name] = dt.type(beta2) * state.v[name] + dt.type(1 - beta2) * (g * g)
        m_hat = m / dt.type(bc1)
        v_hat = v / dt.type(bc2)
        p.data = p.data - dt.type(lr) * m_hat / (np.sqrt(v_hat) + dt.type(eps))
    return state


@contextlib.contextmanager
def frozen(tensors):
    """Temporarily stop gradients into ``tensors``."""
    tensors = list(tensors)
    flags = [t.requires_grad for t in tensors]
    for t in tensors:
        t.requires_grad = False
    try:
        yield
    finally:
        for t, f in zip(tensors, flags):
            t.requires_grad = f


def _stack(images, dtype):
    return Tensor(np.stack(images), dtype=dtype)


class Trainer:
    """Holds parameters, optimiser moments and the batch sampler for one run."""

    def __init__(self, dataset, net_cfg, train_cfg, extractor=None, params=None):
        if not dataset:
            raise ArgumentError("dataset is empty")
        self.dataset = dataset
        self.net_cfg = net_cfg
        self.cfg = train_cfg
        self.extractor = extractor or FeatureExtractor()
        self.params = params if params is not None else init_params(net_cfg, train_cfg.seed)
        self.gen_opt = OptimizerState()
        self.disc_opt = OptimizerState()
        self.step_count = 0
        self.disc_losses = []
        self._rng = np.random.default_rng([train_cfg.seed, 7])
        self._order = []

    def _next_batch(self):
        idx = []
        while len(idx) < self.cfg.batch_size:
            if not self._order:
                self._order = list(self._rng.permutation(len(self.dataset)))
            idx.append(self._order.pop(0))
        dtype = next(iter(self.params.values())).dtype
        mix = _stack([self.dataset[i][0] for i in idx], dtype)
        trans = _stack([self.dataset[i][1] for i in idx], dtype)
        return mix, trans

    def _components(self, net, estimates, target):
        w = self.cfg.weights
        with ad.no_grad():
            target_feats = self.extractor(target)
        feature_ctx = contextlib.nullcontext() if (w.perceptual or w.cooccurrence) else ad.no_grad()
        acc = {}
        for est in estimates:
            with feature_ctx:
                est_feats = self.extractor(est)
            parts = {"l1": l1_loss(est, target)}
            with contextlib.nullcontext() if w.perceptual else ad.no_grad():
                parts["perceptual"] = perceptual_loss(est, target, self.extractor, target_feats, est_feats)
            with contextlib.nullcontext() if w.cooccurrence else ad.no_grad():
                parts["cooccurrence"] = cooccurrence_loss(
                    est, target, self.extractor, self.cfg.gram_normalize, target_feats, est_feats
                )
            if self.cfg.use_discriminator:
                with contextlib.nullcontext() if w.adversarial else ad.no_grad():
                    parts["adversarial"] = generator_adversarial_loss(net.discriminate(est))
            else:
                parts["adversarial"] = 0.0
            for k, v in parts.items():
                acc[k] = v if k not in acc else (ad.add(acc[k], v) if isinstance(v, Tensor) else acc[k] + v)
        n = len(estimates)
        if n > 1:
            acc = {k: (ad.scale(v, 1.0 / n) if isinstance(v, Tensor) else v / n) for k, v in acc.items()}
        return acc

    def step(self):
        with kernels.flush_denormals(self.cfg.flush_denormals):
            return self._step()

    def _step(self):
        mix, trans = self._next_batch()
        net = Network(self.net_cfg, self.params)
        disc = self.params.discriminator()
        gen = self.params.generator()
        estimates = net.forward(mix)

        if self.cfg.use_discriminator:
            ad.zero_grad(disc.values())
            d_loss = discriminator_loss(net.discriminate(trans), net.discriminate(estimates[-1].detach()))
            if not math.isfinite(d_loss.item()):
                raise NonFiniteLossError("discriminator", d_loss.item())
            ad.backward(d_loss)
            adam_step(disc, {k: p.grad for k, p in disc.items()}, self.disc_opt, **self._adam(self.cfg.disc_lr))
            self.disc_losses.append(d_loss.item())

        targets = estimates if self.cfg.loss_on_all_iterates else estimates[-1:]
        with frozen(disc.values()):
            components = self._components(net, targets, trans)
            try:
                total = total_loss(components, self.cfg.weights)
            except NonFiniteLossError as exc:
                exc.report = report({k: components[k] for k in COMPONENTS}, float("nan"))
                raise
        rep = report(components, total)
        if not math.isfinite(rep.total):
            raise NonFiniteLossError("total", rep.total, rep)
        ad.zero_grad(gen.values())
        if total.requires_grad:
            ad.backward(total)
        adam_step(gen, {k: p.grad for k, p in gen.items()}, self.gen_opt, **self._adam())
        self.step_count += 1
        return rep

    def lr_scale(self):
        """Multiplier on both learning rates for the step about to run."""
        c = self.cfg
        if c.lr_schedule == "constant" or c.steps <= 1:
            return 1.0
        frac = min(self.step_count, c.steps - 1) / (c.steps - 1)
        return c.lr_floor + (1.0 - c.lr_floor) * 0.5 * (1.0 + math.cos(math.pi * frac))

    def _adam(self, lr=None):
        c = self.cfg
        base = c.lr if lr is None else lr
        return {"lr": base * self.lr_scale(), "beta1": c.beta1, "beta2": c.beta2, "eps": c.eps}

    def checkpoint(self):
        opts = OrderedDict()
        opts["generator"] = self.gen_opt
        opts["discriminator"] = self.disc_opt
        return Checkpoint(
            config={"network": self.net_cfg.to_dict(), "train": self.cfg.to_dict()},
            params=OrderedDict((k, v.data) for k, v in self.params.items()),
            optimizers=opts,
            step=self.step_count,
            seed=self.cfg.seed,
        )


def train(dataset, net_cfg, train_cfg, extractor=None, callback=None):
    """Run ``train_cfg.steps`` updates; returns ``(Checkpoint, [LossReport, ...])``."""
    trainer = Trainer(dataset, net_cfg, train_cfg, extractor)
    history = []
    for _ in range(train_cfg.steps):
        rep = trainer.step()
        history.append(rep)
        if callback is not None:
            callback(trainer, rep)
    return trainer.checkpoint(), history


def save_checkpoint(path, ckpt):
    ckpt_io.save(path, ckpt)


def load_checkpoint(path):
    return ckpt_io.load(path)


def model_from_checkpoint(ckpt, dtype=np.float32):
    """``(NetworkConfig, NetworkState)`` rebuilt from a checkpoint."""
    try:
        cfg = NetworkConfig.from_dict(ckpt.config["network"])
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"checkpoint config lacks a valid network section ({exc})") from exc
    expected = init_params(cfg, 0)
    missing = [k for k in expected if k not in ckpt.params]
    if missing:
        raise CheckpointError(f"checkpoint is missing parameters: {', '.join(missing[:5])}")
    params = NetworkState(
        (k, Tensor(ckpt.params[k], requires_grad=True, dtype=dtype, name=k)) for k in expected
    )
    for k, p in params.items():
        if p.shape != expected[k].shape:
            raise CheckpointError(f"parameter {k} has shape {list(p.shape)}, expected {list(expected[k].shape)}")
    return cfg, params


def write_loss_log(path, history):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", *COMPONENTS, "total"])
        for i, rep in enumerate(history, start=1):
            w.writerow([i, *(repr(float(x)) for x in rep.row())])
