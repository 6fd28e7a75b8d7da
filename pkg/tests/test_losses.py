import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from refliter import autodiff as ad
from refliter.autodiff import DimensionError, Tensor
from refliter.losses import (
    FeatureExtractor,
    LossWeights,
    NonFiniteLossError,
    adversarial_losses,
    cooccurrence_loss,
    gram,
    l1_loss,
    perceptual_loss,
    total_loss,
)

from gradcheck import check_grad
from oracles import loop_cooccurrence, loop_gram, loop_perceptual, scalar_adversarial

ZETA = FeatureExtractor()


def _img(seed, size=16, n=1):
    return np.random.default_rng(seed).random((n, 3, size, size))


def _t64(x):
    return Tensor(x, dtype=np.float64)


def test_gram_examples():
    with ad.default_dtype(np.float64):
        assert np.all(gram(Tensor(np.zeros((3, 5)))).data == 0)
        g = gram(Tensor([[1.0, 2.0], [3.0, 4.0]])).data
    np.testing.assert_allclose(g, np.array([[5.0, 11.0], [11.0, 25.0]]) / 4)
    np.testing.assert_allclose(loop_gram(np.array([[1.0, 2.0], [3.0, 4.0]])), g)


def test_gram_orthogonal_rows():
    r = 3.0
    f = r * np.eye(4)[:3]  # 3 orthogonal rows of norm r, length 4
    with ad.default_dtype(np.float64):
        g = gram(Tensor(f)).data
    np.testing.assert_allclose(g, r ** 2 / 12 * np.eye(3))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(1, 6), m=st.integers(1, 9))
def test_gram_symmetric_psd(seed, n, m):
    f = np.random.default_rng(seed).standard_normal((n, m))
    with ad.default_dtype(np.float64):
        g = gram(Tensor(f)).data
    assert np.array_equal(g, g.T)
    assert np.linalg.eigvalsh(g).min() >= -1e-6


def test_unnormalized_gram_toggle():
    f = np.random.default_rng(0).random((3, 4))
    with ad.default_dtype(np.float64):
        np.testing.assert_allclose(gram(Tensor(f), normalize=False).data, f @ f.T)


def test_feature_extractor_fixed_and_deterministic():
    x = Tensor(_img(0))
    a = [f.data.tobytes() for f in ZETA(x)]
    b = [f.data.tobytes() for f in FeatureExtractor()(x)]
    assert a == b
    assert [f.shape for f in ZETA(x)] == [(1, 16, 16, 16), (1, 32, 8, 8), (1, 64, 4, 4)]
    # rows of each flattened kernel are orthonormal
    for w, _ in ZETA.weights:
        m = w.reshape(w.shape[0], -1)
        np.testing.assert_allclose(m @ m.T, np.eye(m.shape[0]), atol=1e-10)


def test_feature_extractor_never_receives_gradients():
    x = Tensor(_img(1), requires_grad=True)
    ad.backward(ad.sum_all(ZETA(x)[-1]))
    for w, b in ZETA._params(np.float32):
        assert w.grad is None and b.grad is None


def test_cooccurrence_identical_is_zero():
    x = _t64(_img(2))
    assert cooccurrence_loss(x, x, ZETA).item() == 0.0


def test_cooccurrence_nonnegative_and_matches_loops():
    rng = np.random.default_rng(3)
    for _ in range(5):
        a, b = rng.random((2, 3, 16, 16)), rng.random((2, 3, 16, 16))
        with ad.default_dtype(np.float64):
            v = cooccurrence_loss(Tensor(a), Tensor(b), ZETA).item()
            ref = loop_cooccurrence([f.data for f in ZETA(Tensor(a))], [f.data for f in ZETA(Tensor(b))])
        assert v >= 0
        assert v == pytest.approx(ref, rel=1e-5, abs=1e-12)


def test_cooccurrence_sensitive_to_channel_permutation():
    x = _img(4)
    y = x[:, [2, 0, 1]]
    with ad.default_dtype(np.float64):
        assert cooccurrence_loss(Tensor(x), Tensor(y), ZETA).item() > 0


def test_gram_discards_position():
    f = np.random.default_rng(5).random((6, 20))
    perm = np.random.default_rng(6).permutation(20)
    with ad.default_dtype(np.float64):
        np.testing.assert_allclose(gram(Tensor(f)).data, gram(Tensor(f[:, perm])).data, atol=1e-14)


def test_l1_and_perceptual():
    x = _img(7)
    with ad.default_dtype(np.float64):
        assert l1_loss(Tensor(x), Tensor(x)).item() == 0
        assert perceptual_loss(Tensor(x), Tensor(x), ZETA).item() == 0
        shifted = np.clip(x, 0, 0.9)
        assert l1_loss(Tensor(shifted + 0.1), Tensor(shifted)).item() == pytest.approx(0.1, abs=1e-12)
        y = _img(8)
        v = perceptual_loss(Tensor(x), Tensor(y), ZETA).item()
        ref = loop_perceptual([f.data for f in ZETA(Tensor(x))], [f.data for f in ZETA(Tensor(y))])
    assert v == pytest.approx(ref, rel=1e-5)


def test_shape_mismatch_errors():
    a, b = Tensor(_img(0, 16)), Tensor(_img(0, 8))
    for fn in (l1_loss, lambda p, q: perceptual_loss(p, q, ZETA), lambda p, q: cooccurrence_loss(p, q, ZETA)):
        with pytest.raises(DimensionError):
            fn(a, b)


def test_adversarial_examples():
    z = Tensor(np.zeros((2, 1, 4, 4)), dtype=np.float64)
    gen, disc = adversarial_losses(z, z)
    assert gen.item() == pytest.approx(math.log(2), abs=1e-15)
    assert disc.item() == pytest.approx(2 * math.log(2), abs=1e-15)
    big = Tensor(np.full((1, 1, 2, 2), 50.0), dtype=np.float64)
    _, disc = adversarial_losses(big, ad.scale(big, -1.0))
    assert disc.item() < 1e-20


def test_adversarial_matches_scalar_reference():
    rng = np.random.default_rng(9)
    for _ in range(20):
        dr, df = rng.standard_normal((2, 1, 3, 3)) * 5, rng.standard_normal((2, 1, 3, 3)) * 5
        gen, disc = adversarial_losses(_t64(dr), _t64(df))
        rg, rd = scalar_adversarial(dr, df)
        assert gen.item() == pytest.approx(rg, abs=1e-6)
        assert disc.item() == pytest.approx(rd, abs=1e-6)


def test_total_loss_default_weights():
    comps = {k: _t64(np.asarray(v)) for k, v in zip(("l1", "perceptual", "cooccurrence", "adversarial"), (1, 2, 3, 4))}
    assert total_loss(comps, LossWeights()).item() == pytest.approx(3.5, abs=1e-12)
    zeros = {k: _t64(np.asarray(0.0)) for k in comps}
    assert total_loss(zeros, LossWeights()).item() == 0.0
    only = LossWeights(perceptual=0, cooccurrence=1, adversarial=0)
    comps["l1"] = _t64(np.asarray(0.0))
    assert total_loss(comps, only).item() == 3.0


def test_total_loss_rejects_non_finite():
    comps = {"l1": 0.1, "perceptual": 0.2, "cooccurrence": float("nan"), "adversarial": 0.0}
    with pytest.raises(NonFiniteLossError) as info:
        total_loss(comps, LossWeights())
    assert info.value.component == "cooccurrence"


def test_negative_weight_rejected():
    with pytest.raises(ValueError):
        LossWeights(perceptual=-1)


@pytest.mark.parametrize("name", ["l1", "perceptual", "cooccurrence", "adversarial"])
def test_loss_finite_differences(name):
    rng = np.random.default_rng(11)
    target = Tensor(rng.random((1, 3, 8, 8)), dtype=np.float64)
    est = rng.random((1, 3, 8, 8))
    fns = {
        "l1": lambda t: l1_loss(t, target),
        "perceptual": lambda t: perceptual_loss(t, target, ZETA),
        "cooccurrence": lambda t: ad.scale(cooccurrence_loss(t, target, ZETA), 100.0),
        "adversarial": lambda t: adversarial_losses(t, ad.scale(t, 0.5))[1],
    }
    assert check_grad(fns[name], [est]) < 1e-4
