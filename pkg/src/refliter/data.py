"""Synthetic mixture images and image file I/O.

Images are float arrays ``[3, H, W]`` in [0, 1]. A mixture is

    I = clip(alpha*T + beta*(blur(R) + 0.5*blur(shift(R, d))) / z, 0, 1)

with ``z = 1.5`` when a ghost offset ``d > 0`` is present and 1 otherwise.
"""
from __future__ import annotations

import os
from dataclasses import asdict, dataclass

import numpy as np
from PIL import Image

from .autodiff import ArgumentError, DimensionError

ALPHA_RANGE = (0.6, 1.0)
BETA_RANGE = (0.0, 0.5)
SIGMA_RANGE = (0.0, 2.0)
GHOST_RANGE = (0, 4)


@dataclass
class MixtureSpec:
    alpha: float = 1.0
    beta: float = 0.0
    blur_sigma: float = 0.0
    ghost_offset: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.blur_sigma < 0:
            raise ArgumentError(f"blur_sigma must be >= 0, got {self.blur_sigma}")
        if self.ghost_offset < 0:
            raise ArgumentError(f"ghost_offset must be >= 0, got {self.ghost_offset}")

    def describe(self):
        return " ".join(f"{k}={v}" for k, v in asdict(self).items())


def gaussian_kernel(sigma):
    """1-D Gaussian truncated at 3 sigma and renormalised to sum 1."""
    radius = max(1, int(np.ceil(3 * sigma)))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(img, sigma):
    """Separable blur with reflected borders; identity for sigma == 0."""
    if sigma == 0:
        return np.array(img, dtype=np.float64)
    k = gaussian_kernel(sigma)
    r = len(k) // 2
    out = np.asarray(img, dtype=np.float64)
    for axis in (-2, -1):
        pad = [(0, 0)] * out.ndim
        pad[axis] = (r, r)
        # symmetric reflection needs r <= size; fall back to edge replication
        mode = "symmetric" if r <= out.shape[axis] else "edge"
        p = np.pad(out, pad, mode=mode)
        acc = np.zeros_like(out)
        n = out.shape[axis]
        for i, w in enumerate(k):
            acc += w * np.take(p, np.arange(i, i + n), axis=axis)
        out = acc
    return out


def shift(img, offset):
    """Translate down-right by ``offset`` pixels, replicating the top/left edge."""
    if offset == 0:
        return np.array(img, dtype=np.float64)
    h, w = img.shape[-2:]
    p = np.pad(img, [(0, 0)] * (img.ndim - 2) + [(offset, 0), (offset, 0)], mode="edge")
    return p[..., :h, :w].astype(np.float64)


def compose(trans, refl, spec):
    trans = np.asarray(trans, dtype=np.float64)
    refl = np.asarray(refl, dtype=np.float64)
    if trans.shape != refl.shape:
        raise DimensionError(f"compose: transmission {trans.shape} and reflection {refl.shape} differ")
    r = gaussian_blur(refl, spec.blur_sigma)
    norm = 1.0
    if spec.ghost_offset > 0:
        r = r + 0.5 * gaussian_blur(shift(refl, spec.ghost_offset), spec.blur_sigma)
        norm = 1.5
    return np.clip(spec.alpha * trans + spec.beta * r / norm, 0.0, 1.0)


# -- procedural textures ----------------------------------------------------------


def _linear_gradient(rng, size):
    yy, xx = np.mgrid[0:size, 0:size] / max(size - 1, 1)
    theta = rng.uniform(0, 2 * np.pi)
    t = np.cos(theta) * xx + np.sin(theta) * yy
    t = (t - t.min()) / max(t.max() - t.min(), 1e-12)
    c0, c1 = rng.uniform(0, 1, 3), rng.uniform(0, 1, 3)
    return c0[:, None, None] * (1 - t) + c1[:, None, None] * t


def _checker(rng, size):
    cell = int(rng.integers(4, max(5, size // 3)))
    yy, xx = np.mgrid[0:size, 0:size]
    mask = ((yy // cell + xx // cell) % 2).astype(np.float64)
    c0, c1 = rng.uniform(0, 1, 3), rng.uniform(0, 1, 3)
    return c0[:, None, None] * (1 - mask) + c1[:, None, None] * mask


def _blobs(rng, size):
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    img = np.broadcast_to(rng.uniform(0, 0.5, 3)[:, None, None], (3, size, size)).copy()
    for _ in range(int(rng.integers(2, 6))):
        cy, cx = rng.uniform(0, size, 2)
        rad = rng.uniform(size / 10, size / 3)
        w = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * rad ** 2))
        img += w[None] * rng.uniform(0, 0.8, 3)[:, None, None]
    return np.clip(img, 0, 1)


TEXTURES = (_linear_gradient, _checker, _blobs)


def random_texture(rng, size):
    return TEXTURES[int(rng.integers(len(TEXTURES)))](rng, size)


def random_spec(rng, seed):
    return MixtureSpec(
        alpha=float(rng.uniform(*ALPHA_RANGE)),
        beta=float(rng.uniform(*BETA_RANGE)),
        blur_sigma=float(rng.uniform(*SIGMA_RANGE)),
        ghost_offset=int(rng.integers(GHOST_RANGE[0], GHOST_RANGE[1] + 1)),
        seed=seed,
    )


def make_pair(seed, size):
    rng = np.random.default_rng(seed)
    trans = random_texture(rng, size)
    refl = random_texture(rng, size)
    spec = random_spec(rng, seed)
    return compose(trans, refl, spec), trans, spec


def make_dataset(n, size, seed, return_specs=False):
    """``n`` deterministic (mixture, transmission) pairs of shape ``[3, size, size]``."""
    if n < 1:
        raise ArgumentError(f"n must be >= 1, got {n}")
    if size < 4 or size % 4:
        raise ArgumentError(f"size must be a positive multiple of 4, got {size}")
    pairs, specs = [], []
    for i in range(n):
        mix, trans, spec = make_pair(seed * 1_000_003 + i, size)
        pairs.append((mix.astype(np.float32), trans.astype(np.float32)))
        specs.append(spec)
    return (pairs, specs) if return_specs else pairs


# -- file I/O --------------------------------------------------------------------------


def load_image(path):
    """Read an 8-bit PNG or binary PPM as ``[3, H, W]`` float32 in [0, 1].

    Grayscale files are replicated to three channels.
    """
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            if mode == "L":
                arr = np.asarray(im, dtype=np.uint8)
                arr = np.repeat(arr[..., None], 3, axis=2)
            elif mode == "RGB":
                arr = np.asarray(im, dtype=np.uint8)
            else:
                raise OSError(f"{path}: unsupported image mode {mode!r} (need 8-bit RGB or grayscale)")
    except OSError as exc:
        if str(path) in str(exc):
            raise
        raise OSError(f"{path}: cannot read image ({exc})") from exc
    return (arr.transpose(2, 0, 1).astype(np.float32) / 255.0).astype(np.float32)


def to_uint8(image):
    img = np.asarray(image, dtype=np.float64)
    return np.floor(np.clip(img, 0, 1) * 255 + 0.5).astype(np.uint8)


def save_image(image, path):
    """Write ``[3, H, W]`` in [0, 1] as 8-bit; format from the extension (.png / .ppm)."""
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[0] != 3:
        raise DimensionError(f"save_image: expected [3,H,W], got {list(img.shape)}")
    arr = to_uint8(img).transpose(1, 2, 0)
    fmt = "PPM" if str(path).lower().endswith((".ppm", ".pnm")) else "PNG"
    try:
        Image.fromarray(arr, mode="RGB").save(path, format=fmt)
    except OSError as exc:
        raise OSError(f"{path}: cannot write image ({exc})") from exc


def pair_names(directory):
    """Sorted stems ``NNNN`` with both ``NNNN_mix.png`` and ``NNNN_trans.png``.

    Raises OSError listing orphans when a file lacks its partner.
    """
    if not os.path.isdir(directory):
        raise OSError(f"{directory}: not a dataset directory")
    mixes, trans = set(), set()
    for name in os.listdir(directory):
        if name.endswith("_mix.png"):
            mixes.add(name[: -len("_mix.png")])
        elif name.endswith("_trans.png"):
            trans.add(name[: -len("_trans.png")])
    orphans = sorted(f"{s}_mix.png" for s in mixes - trans) + sorted(f"{s}_trans.png" for s in trans - mixes)
    if orphans:
        raise OSError(f"{directory}: unpaired files: {', '.join(orphans)}")
    if not mixes:
        raise OSError(f"{directory}: no NNNN_mix.png / NNNN_trans.png pairs found")
    return sorted(mixes)


def load_dataset(directory):
    return [
        (load_image(os.path.join(directory, f"{s}_mix.png")), load_image(os.path.join(directory, f"{s}_trans.png")))
        for s in pair_names(directory)
    ]


def write_dataset(directory, n, size, seed):
    pairs, specs = make_dataset(n, size, seed, return_specs=True)
    os.makedirs(directory, exist_ok=True)
    lines = []
    for i, ((mix, trans), spec) in enumerate(zip(pairs, specs)):
        stem = f"{i:04d}"
        save_image(mix, os.path.join(directory, f"{stem}_mix.png"))
        save_image(trans, os.path.join(directory, f"{stem}_trans.png"))
        lines.append(f"{stem} {spec.describe()}")
    with open(os.path.join(directory, "manifest.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return pairs
