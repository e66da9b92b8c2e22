"""Numba-compiled memory-movement kernels backing the convolution ops.

All convolutions are computed as im2col + one BLAS matmul. The column
buffers use channels-last (NHWC) layout internally because the gathers
then touch contiguous runs of memory; the public tensor API stays NCHW.
Kernels are compiled per dtype on first use and cached on disk.
"""

import ctypes

import numba
import numpy as np

numba.config.THREADING_LAYER = "omp"


def _tune_allocator() -> None:
    # Large activation buffers churn every update step; without this glibc
    # mmaps/munmaps them each time and page faults dominate the runtime.
    try:
        libc = ctypes.CDLL("libc.so.6", use_errno=True)
        libc.mallopt(-3, 1 << 30)  # M_MMAP_THRESHOLD
        libc.mallopt(-1, 1 << 30)  # M_TRIM_THRESHOLD
    except (OSError, AttributeError):
        pass


_tune_allocator()

_blas_controller = None


def limit_blas_threads(n: int = 1) -> None:
    """Cap the BLAS pool size; spinning BLAS workers otherwise starve the
    numba kernels on small machines. Called by the training entry points."""
    global _blas_controller
    try:
        import threadpoolctl
        _blas_controller = threadpoolctl.threadpool_limits(limits=n, user_api="blas")
    except ImportError:
        pass


@numba.njit(parallel=True, cache=True)
def nchw_to_nhwc(src, dst):
    B, C, H, W = src.shape
    for b in numba.prange(B):
        for h in range(H):
            for c in range(C):
                for w in range(W):
                    dst[b, h, w, c] = src[b, c, h, w]


@numba.njit(parallel=True, cache=True)
def nhwc_to_nchw(src, dst):
    B, H, W, C = src.shape
    for b in numba.prange(B):
        for h in range(H):
            for c in range(C):
                for w in range(W):
                    dst[b, c, h, w] = src[b, h, w, c]


@numba.njit(parallel=True, cache=True)
def im2col(x, k, stride, col):
    """Gather k*k patches of NHWC `x` into rows of `col`.

    col[(b*Ho+i)*Wo+j, (di*k+dj)*C+c] = x[b, i*stride+di, j*stride+dj, c]
    """
    B, H, W, C = x.shape
    Ho = (H - k) // stride + 1
    Wo = (W - k) // stride + 1
    kc = k * C
    for b in numba.prange(B):
        for i in range(Ho):
            si = i * stride
            for j in range(Wo):
                sj = j * stride
                row = (b * Ho + i) * Wo + j
                for di in range(k):
                    base = di * kc
                    for dj in range(k):
                        off = base + dj * C
                        for c in range(C):
                            col[row, off + c] = x[b, si + di, sj + dj, c]


@numba.njit(parallel=True, cache=True)
def col2im_add(col, k, stride, out):
    """Scatter-add rows of `col` back onto NHWC `out` (adjoint of im2col).

    Rows past the last full anchor (from output_padding) never receive a
    contribution; the caller zero-fills `out` first.
    """
    B, H, W, C = out.shape
    Ho = (H - k) // stride + 1
    Wo = (W - k) // stride + 1
    kc = k * C
    for b in numba.prange(B):
        for i in range(Ho):
            si = i * stride
            for j in range(Wo):
                sj = j * stride
                row = (b * Ho + i) * Wo + j
                for di in range(k):
                    base = di * kc
                    for dj in range(k):
                        off = base + dj * C
                        for c in range(C):
                            out[b, si + di, sj + dj, c] += col[row, off + c]


def warmup(dtype=np.float32) -> None:
    """Force-compile every kernel for `dtype` (avoids a pause mid-training)."""
    x = np.zeros((1, 2, 6, 6), dtype)
    xh = np.zeros((1, 6, 6, 2), dtype)
    nchw_to_nhwc(x, xh)
    nhwc_to_nchw(xh, x)
    col = np.zeros((1 * 2 * 2, 3 * 3 * 2), dtype)
    im2col(xh, 3, 2, col)
    col2im_add(col, 3, 2, xh)
