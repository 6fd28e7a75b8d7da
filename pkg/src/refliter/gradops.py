"""Fixed image-gradient filter bank.

Three filters are applied to every RGB channel:

* horizontal difference ``[-1 1]``
* vertical difference ``[-1 1]^T``
* 4-neighbour Laplacian ``[[0,1,0],[1,-4,1],[0,1,0]]``

Each filter is embedded in a 3x3 cross-correlation kernel with zero padding
of one pixel, so the 1x2 differences are anchored at the left/top pixel
(``out[y, x] = img[y, x+1] - img[y, x]``) and the output keeps the input's
spatial size. Output channel order is (f1 R, f1 G, f1 B, f2 R, ..., f3 B).
"""
import numpy as np

from .autodiff import ArgumentError, DimensionError, Tensor, conv2d

HORIZONTAL = np.array([[-1.0, 1.0]])
VERTICAL = HORIZONTAL.T
LAPLACIAN = np.array([[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]])


def _embed(f):
    # place the filter so its (0, 0) tap sits on the centre of a 3x3 window
    k = np.zeros((3, 3))
    if f.shape == (3, 3):
        return f.copy()
    k[1:1 + f.shape[0], 1:1 + f.shape[1]] = f
    return k


def filter_bank(channels=3):
    """Kernel of shape ``[3*channels, channels, 3, 3]`` (block diagonal over channels)."""
    bank = np.zeros((3 * channels, channels, 3, 3))
    for i, f in enumerate((HORIZONTAL, VERTICAL, LAPLACIAN)):
        for c in range(channels):
            bank[i * channels + c, c] = _embed(f)
    return bank


_BANKS = {}


def _bank(dtype):
    key = np.dtype(dtype)
    if key not in _BANKS:
        _BANKS[key] = Tensor(filter_bank(3), dtype=key)
    return _BANKS[key]


def gradient(image):
    """Differentiable gradient image ``[N, 9, H, W]`` of an RGB batch ``[N, 3, H, W]``."""
    if image.ndim != 4 or image.shape[1] != 3:
        raise DimensionError(f"gradient: expected [N,3,H,W], got {list(image.shape)}")
    if image.shape[2] < 2 or image.shape[3] < 2:
        raise ArgumentError(f"gradient: image must be at least 2x2, got {image.shape[2]}x{image.shape[3]}")
    return conv2d(image, _bank(image.dtype), None, stride=1, padding=1)
