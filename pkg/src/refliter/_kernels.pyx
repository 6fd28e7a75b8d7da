# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled im2col / col2im kernels for 2-D cross-correlation.

Column layout is ``(C*k*k, N*Ho*Wo)``: row index ``(c*k + ki)*k + kj``,
column index ``(n*Ho + oy)*Wo + ox``. Zero padding is folded into the
gather so no padded copy of the input is materialised.
"""
import numpy as np
cimport numpy as cnp

cnp.import_array()

ctypedef fused real:
    float
    double


cdef inline Py_ssize_t _lo(Py_ssize_t kj, Py_ssize_t stride, Py_ssize_t pad) nogil:
    # first output column whose input column ox*stride + kj - pad is >= 0
    cdef Py_ssize_t d = pad - kj
    if d <= 0:
        return 0
    return (d + stride - 1) // stride


cdef inline Py_ssize_t _hi(Py_ssize_t kj, Py_ssize_t stride, Py_ssize_t pad,
                           Py_ssize_t w, Py_ssize_t wo) nogil:
    # one past the last output column whose input column is < w
    cdef Py_ssize_t d = w - 1 + pad - kj
    if d < 0:
        return 0
    d = d // stride + 1
    return d if d < wo else wo


def _im2col(const real[:, :, :, ::1] x, real[:, ::1] cols,
            Py_ssize_t k, Py_ssize_t stride, Py_ssize_t pad,
            Py_ssize_t ho, Py_ssize_t wo):
    cdef Py_ssize_t n_img = x.shape[0], n_ch = x.shape[1]
    cdef Py_ssize_t h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t n, c, ki, kj, oy, ox, iy, row, col0, lo, hi, off
    with nogil:
        for c in range(n_ch):
            for ki in range(k):
                for kj in range(k):
                    row = (c * k + ki) * k + kj
                    lo = _lo(kj, stride, pad)
                    hi = _hi(kj, stride, pad, w, wo)
                    if hi < lo:
                        hi = lo
                    off = kj - pad
                    for n in range(n_img):
                        for oy in range(ho):
                            col0 = (n * ho + oy) * wo
                            iy = oy * stride + ki - pad
                            if iy < 0 or iy >= h:
                                for ox in range(wo):
                                    cols[row, col0 + ox] = 0
                                continue
                            for ox in range(lo):
                                cols[row, col0 + ox] = 0
                            if stride == 1:
                                for ox in range(lo, hi):
                                    cols[row, col0 + ox] = x[n, c, iy, ox + off]
                            else:
                                for ox in range(lo, hi):
                                    cols[row, col0 + ox] = x[n, c, iy, ox * stride + off]
                            for ox in range(hi, wo):
                                cols[row, col0 + ox] = 0


def _col2im(const real[:, ::1] cols, real[:, :, :, ::1] out,
            Py_ssize_t k, Py_ssize_t stride, Py_ssize_t pad,
            Py_ssize_t ho, Py_ssize_t wo):
    cdef Py_ssize_t n_img = out.shape[0], n_ch = out.shape[1]
    cdef Py_ssize_t h = out.shape[2], w = out.shape[3]
    cdef Py_ssize_t n, c, ki, kj, oy, ox, iy, row, col0, lo, hi, off
    with nogil:
        for c in range(n_ch):
            for ki in range(k):
                for kj in range(k):
                    row = (c * k + ki) * k + kj
                    lo = _lo(kj, stride, pad)
                    hi = _hi(kj, stride, pad, w, wo)
                    off = kj - pad
                    for n in range(n_img):
                        for oy in range(ho):
                            iy = oy * stride + ki - pad
                            if iy < 0 or iy >= h:
                                continue
                            col0 = (n * ho + oy) * wo
                            if stride == 1:
                                for ox in range(lo, hi):
                                    out[n, c, iy, ox + off] += cols[row, col0 + ox]
                            else:
                                for ox in range(lo, hi):
                                    out[n, c, iy, ox * stride + off] += cols[row, col0 + ox]


def im2col(x, Py_ssize_t k, Py_ssize_t stride, Py_ssize_t pad):
    x = np.ascontiguousarray(x)
    n, c, h, w = x.shape
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    cols = np.empty((c * k * k, n * ho * wo), dtype=x.dtype)
    _im2col(x, cols, k, stride, pad, ho, wo)
    return cols


def col2im(cols, shape, Py_ssize_t k, Py_ssize_t stride, Py_ssize_t pad):
    n, c, h, w = shape
    cols = np.ascontiguousarray(cols)
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    out = np.zeros((n, c, h, w), dtype=cols.dtype)
    _col2im(cols, out, k, stride, pad, ho, wo)
    return out


cdef extern from *:
    """
    #if defined(__SSE2__) || defined(_M_X64)
    #include <xmmintrin.h>
    /* FTZ (bit 15) and DAZ (bit 6) */
    #define RF_FTZ_DAZ 0x8040u
    static int rf_flush_supported(void) { return 1; }
    static unsigned int rf_get_csr(void) { return _mm_getcsr(); }
    static void rf_set_csr(unsigned int v) { _mm_setcsr(v); }
    #else
    #define RF_FTZ_DAZ 0u
    static int rf_flush_supported(void) { return 0; }
    static unsigned int rf_get_csr(void) { return 0; }
    static void rf_set_csr(unsigned int v) { (void)v; }
    #endif
    """
    unsigned int RF_FTZ_DAZ
    int rf_flush_supported()
    unsigned int rf_get_csr()
    void rf_set_csr(unsigned int v)


def flush_supported():
    return bool(rf_flush_supported())


def set_flush_denormal(bint enabled):
    """Toggle flush-to-zero/denormals-are-zero for the calling thread; returns the previous setting."""
    cdef unsigned int csr = rf_get_csr()
    cdef bint before = (csr & RF_FTZ_DAZ) == RF_FTZ_DAZ and RF_FTZ_DAZ != 0
    if enabled:
        rf_set_csr(csr | RF_FTZ_DAZ)
    else:
        rf_set_csr(csr & ~RF_FTZ_DAZ)
    return before
