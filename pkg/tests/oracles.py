"""Slow, direct reference implementations used as test oracles.

None of these reuse the package's vectorised code paths.
"""
import math

import numpy as np


def naive_conv2d(x, w, b, stride, padding):
    n, c, h, wd = x.shape
    f, _, k, _ = w.shape
    ho = (h + 2 * padding - k) // stride + 1
    wo = (wd + 2 * padding - k) // stride + 1
    out = np.zeros((n, f, ho, wo))
    for i in range(n):
        for o in range(f):
            for y in range(ho):
                for xx in range(wo):
                    acc = 0.0 if b is None else float(b[o])
                    for ci in range(c):
                        for ky in range(k):
                            for kx in range(k):
                                iy = y * stride + ky - padding
                                ix = xx * stride + kx - padding
                                if 0 <= iy < h and 0 <= ix < wd:
                                    acc += float(x[i, ci, iy, ix]) * float(w[o, ci, ky, kx])
                    out[i, o, y, xx] = acc
    return out


def naive_matmul(a, b):
    n, m = a.shape
    p = b.shape[1]
    out = np.zeros((n, p))
    for i in range(n):
        for j in range(p):
            s = 0.0
            for k in range(m):
                s += float(a[i, k]) * float(b[k, j])
            out[i, j] = s
    return out


def loop_gram(f, normalize=True):
    n, m = f.shape
    g = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            g[i, j] = float(np.dot(f[i].astype(np.float64), f[j].astype(np.float64)))
    return g / (n * m) if normalize else g


def loop_cooccurrence(feats_est, feats_tgt, normalize=True):
    """feats_*: list over layers of arrays [N, C, H, W]."""
    total = 0.0
    for fe, ft in zip(feats_est, feats_tgt):
        nb = fe.shape[0]
        layer = 0.0
        for b in range(nb):
            ge = loop_gram(fe[b].reshape(fe.shape[1], -1), normalize)
            gt = loop_gram(ft[b].reshape(ft.shape[1], -1), normalize)
            for i in range(ge.shape[0]):
                for j in range(ge.shape[1]):
                    d = ge[i, j] - gt[i, j]
                    layer += d * d
        total += layer / nb
    return total


def loop_perceptual(feats_est, feats_tgt):
    total = 0.0
    for fe, ft in zip(feats_est, feats_tgt):
        s = 0.0
        for c in range(fe.shape[1]):
            s += float(np.abs(fe[:, c].astype(np.float64) - ft[:, c].astype(np.float64)).sum())
        total += s / fe.size
    return total


def direct_ssim(a, b, size=11, sigma=1.5, c1=0.01 ** 2, c2=0.03 ** 2):
    """Two-pass local SSIM per window position, averaged per channel then over channels."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, *a.shape[-2:])
    b = np.asarray(b, dtype=np.float64).reshape(-1, *b.shape[-2:])
    ax = np.arange(size) - (size - 1) / 2
    g1 = np.exp(-(ax ** 2) / (2 * sigma ** 2))
    win = np.outer(g1, g1)
    win /= win.sum()
    chans = []
    for c in range(a.shape[0]):
        vals = []
        for y in range(a.shape[1] - size + 1):
            for x in range(a.shape[2] - size + 1):
                pa = a[c, y:y + size, x:x + size]
                pb = b[c, y:y + size, x:x + size]
                mu_a = float((win * pa).sum())
                mu_b = float((win * pb).sum())
                va = float((win * (pa - mu_a) ** 2).sum())
                vb = float((win * (pb - mu_b) ** 2).sum())
                cov = float((win * (pa - mu_a) * (pb - mu_b)).sum())
                vals.append(
                    ((2 * mu_a * mu_b + c1) * (2 * cov + c2))
                    / ((mu_a ** 2 + mu_b ** 2 + c1) * (va + vb + c2))
                )
        chans.append(sum(vals) / len(vals))
    return sum(chans) / len(chans)


def direct_psnr(a, b):
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    mse = sum((x - y) ** 2 for x, y in zip(a, b)) / len(a)
    return 100.0 if mse == 0 else min(100.0, 10 * math.log10(1 / mse))


def scalar_adam(grads, p0, lr, b1=0.9, b2=0.999, eps=1e-8):
    """Trace of a single scalar parameter under Adam."""
    p, m, v = float(p0), 0.0, 0.0
    trace = []
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mh = m / (1 - b1 ** t)
        vh = v / (1 - b2 ** t)
        p = p - lr * mh / (math.sqrt(vh) + eps)
        trace.append(p)
    return trace


def softplus(x):
    return math.log1p(math.exp(-abs(x))) + max(x, 0.0)


def scalar_adversarial(d_real, d_fake):
    dr = [float(v) for v in np.ravel(d_real)]
    df = [float(v) for v in np.ravel(d_fake)]
    gen = sum(softplus(-v) for v in df) / len(df)
    disc = sum(softplus(-v) for v in dr) / len(dr) + sum(softplus(v) for v in df) / len(df)
    return gen, disc


def numeric_grad(fn, arrays, eps=1e-3, max_coords=None, rng=None):
    """Central differences of scalar ``fn(*arrays)`` w.r.t. each array (float64).

    With ``max_coords`` only a random subset of coordinates per array is
    probed; returns a list of (indices, numeric values).
    """
    rng = rng or np.random.default_rng(0)
    out = []
    for arr in arrays:
        flat = arr.reshape(-1)
        idx = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            idx = rng.choice(flat.size, size=max_coords, replace=False)
        vals = np.empty(len(idx))
        for j, i in enumerate(idx):
            old = flat[i]
            flat[i] = old + eps
            fp = fn(*arrays)
            flat[i] = old - eps
            fm = fn(*arrays)
            flat[i] = old
            vals[j] = (fp - fm) / (2 * eps)
        out.append((idx, vals))
    return out


def rel_error(analytic, numeric):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    return float(np.max(np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric)))) if numeric.size else 0.0
