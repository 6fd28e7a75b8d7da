import numpy as np
import pytest

from refliter import _kernels_py, kernels

backends = kernels.available_backends()


@pytest.mark.parametrize("shape,k,stride,pad", [
    ((1, 1, 3, 3), 3, 1, 1),
    ((2, 3, 5, 7), 3, 2, 1),
    ((2, 4, 8, 8), 3, 1, 0),
    ((1, 2, 6, 6), 1, 2, 0),
    ((3, 2, 9, 4), 5, 2, 2),
])
@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_backends_bit_identical(shape, k, stride, pad, dtype):
    rng = np.random.default_rng(0)
    x = rng.standard_normal(shape).astype(dtype)
    ref_cols = _kernels_py.im2col(x, k, stride, pad)
    ref_img = _kernels_py.col2im(ref_cols, shape, k, stride, pad)
    for name, mod in backends.items():
        cols = mod.im2col(x, k, stride, pad)
        assert cols.dtype == dtype
        np.testing.assert_array_equal(cols, ref_cols, err_msg=name)
        np.testing.assert_array_equal(mod.col2im(cols, shape, k, stride, pad), ref_img, err_msg=name)


def test_col2im_is_adjoint_of_im2col():
    rng = np.random.default_rng(1)
    shape = (2, 3, 7, 6)
    x = rng.standard_normal(shape)
    for mod in backends.values():
        cols = mod.im2col(x, 3, 2, 1)
        y = rng.standard_normal(cols.shape)
        lhs = float((cols * y).sum())
        rhs = float((x * mod.col2im(y, shape, 3, 2, 1)).sum())
        assert lhs == pytest.approx(rhs, rel=1e-12)


def test_compiled_backend_selected_when_built():
    if "cython" in backends:
        assert kernels.BACKEND in ("cython", "python")
    else:
        assert kernels.BACKEND == "python"


def test_flush_denormals_scoped():
    tiny = np.array([1e-39], dtype=np.float32)
    if not kernels.flush_supported():
        with kernels.flush_denormals() as on:
            assert on is False
        return
    assert (tiny * np.float32(1))[0] != 0
    with kernels.flush_denormals() as on:
        assert on is True
        assert (tiny * np.float32(1))[0] == 0
        assert np.float32(1e-30) * np.float32(1e-10) == 0
        with kernels.flush_denormals(False) as inner:
            assert inner is False
            assert (tiny * np.float32(1))[0] == 0
    assert (tiny * np.float32(1))[0] != 0


def test_flush_denormals_leaves_normal_values_alone():
    rng = np.random.default_rng(3)
    a, b = rng.standard_normal((40, 30)), rng.standard_normal((30, 20))
    ref = a @ b
    with kernels.flush_denormals():
        assert np.array_equal(a @ b, ref)
