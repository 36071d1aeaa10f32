"""Forward and backward kernels for the differentiable primitives.

Convolutions are cross-correlations with stride 1 and zero "same" padding of
``(K - 1) // 2`` samples per side, so the time length is always preserved.
Short kernels use blocked im2col + GEMM; long kernels (the 55-tap layers of
the models) go through the frequency domain, where each frequency bin is a
small ``[B, Cin] @ [Cin, Cout]`` product. Both paths agree with the direct
reference to float rounding.
"""

from __future__ import annotations

import numpy as np
import scipy.fft as sfft
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeError

# Upper bound on the number of elements in one im2col buffer.
_COLUMN_BUDGET = 1 << 22
# Kernels at least this long take the FFT path.
FFT_MIN_KERNEL = 16


def _check_conv(x: np.ndarray, w: np.ndarray, b: np.ndarray | None) -> None:
    if x.ndim != 3 or w.ndim != 3:
        raise ShapeError(f"conv1d expects x [B,Cin,T] and w [Cout,Cin,K], got {x.shape} and {w.shape}")
    if w.shape[2] % 2 == 0:
        raise ShapeError(f"kernel length must be odd, got {w.shape[2]}")
    if w.shape[1] != x.shape[1]:
        raise ShapeError(f"weight expects {w.shape[1]} input channels, input has {x.shape[1]}")
    if b is not None and b.shape != (w.shape[0],):
        raise ShapeError(f"bias shape {b.shape} does not match {w.shape[0]} output channels")


def conv1d_reference(x: np.ndarray, w: np.ndarray, b: np.ndarray | None = None) -> np.ndarray:
    """Direct O(Cout*Cin*K*T) cross-correlation; the ground truth for the fast path."""
    _check_conv(x, w, b)
    n_batch, c_in, length = x.shape
    c_out, _, k = w.shape
    pad = (k - 1) // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad)))
    y = np.zeros((n_batch, c_out, length), dtype=np.result_type(x, w))
    for o in range(c_out):
        for c in range(c_in):
            for j in range(k):
                y[:, o, :] += w[o, c, j] * xp[:, c, j:j + length]
        if b is not None:
            y[:, o, :] += b[o]
    return y


def _column_blocks(length: int, rows_per_step: int):
    for start in range(0, length, rows_per_step):
        yield start, min(start + rows_per_step, length)


def _columns(xp_item: np.ndarray, k: int, start: int, stop: int) -> np.ndarray:
    # xp_item: [Cin, T + K - 1] padded input of one batch item -> [Cin*K, stop - start]
    window = sliding_window_view(xp_item[:, start:stop + k - 1], k, axis=1)
    return window.transpose(0, 2, 1).reshape(-1, stop - start)


def _fft_size(length: int, k: int) -> int:
    # long enough that neither the forward nor the adjoint products wrap around
    return sfft.next_fast_len(length + k - 1, real=True)


def _freq_major(x: np.ndarray, n: int) -> np.ndarray:
    """``[A, B, T]`` real -> ``[F, A, B]`` contiguous spectrum."""
    return np.ascontiguousarray(sfft.rfft(x, n, axis=2).transpose(2, 0, 1))


def _time_major_inverse(spec: np.ndarray, n: int, start: int, length: int) -> np.ndarray:
    """``[F, A, B]`` spectrum -> ``[A, B, length]`` real, window ``[start, start + length)``."""
    full = sfft.irfft(np.ascontiguousarray(spec.transpose(1, 2, 0)), n, axis=2)
    return np.ascontiguousarray(full[:, :, start:start + length])


def conv1d_im2col(x: np.ndarray, w: np.ndarray, b: np.ndarray | None = None) -> np.ndarray:
    """Same-padded cross-correlation via blocked im2col + GEMM."""
    _check_conv(x, w, b)
    n_batch, c_in, length = x.shape
    c_out, _, k = w.shape
    pad = (k - 1) // 2
    dtype = np.result_type(x, w)
    xp = np.pad(x.astype(dtype, copy=False), ((0, 0), (0, 0), (pad, pad)))
    w2 = w.reshape(c_out, c_in * k).astype(dtype, copy=False)
    rows = max(1, _COLUMN_BUDGET // (c_in * k))
    y = np.empty((n_batch, c_out, length), dtype=dtype)
    for i in range(n_batch):
        for start, stop in _column_blocks(length, rows):
            np.matmul(w2, _columns(xp[i], k, start, stop), out=y[i, :, start:stop])
    if b is not None:
        y += b.astype(dtype, copy=False)[None, :, None]
    return y


def conv1d_fft(x: np.ndarray, w: np.ndarray, b: np.ndarray | None = None) -> np.ndarray:
    """Same-padded cross-correlation computed as a product of spectra."""
    _check_conv(x, w, b)
    length, k = x.shape[2], w.shape[2]
    pad = (k - 1) // 2
    dtype = np.result_type(x, w)
    n = _fft_size(length, k)
    xf = _freq_major(x.astype(dtype, copy=False), n)                              # [F, B, Cin]
    wf = _freq_major(w[:, :, ::-1].astype(dtype, copy=False).transpose(1, 0, 2), n)  # [F, Cin, Cout]
    y = _time_major_inverse(np.matmul(xf, wf), n, pad, length).astype(dtype, copy=False)
    if b is not None:
        y += b.astype(dtype, copy=False)[None, :, None]
    return y


def conv1d(x: np.ndarray, w: np.ndarray, b: np.ndarray | None = None) -> np.ndarray:
    """Same-padded stride-1 cross-correlation ``[B,Cin,T] x [Cout,Cin,K] -> [B,Cout,T]``."""
    if w.ndim == 3 and w.shape[2] >= FFT_MIN_KERNEL:
        return conv1d_fft(x, w, b)
    return conv1d_im2col(x, w, b)


def conv1d_backward(dy: np.ndarray, x: np.ndarray, w: np.ndarray, need_dx: bool = True):
    """Gradients of :func:`conv1d` with respect to input, weight and bias.

    Returns ``(dx, dw, db)``; ``dx`` is ``None`` when ``need_dx`` is false.
    """
    _check_conv(x, w, None)
    n_batch, c_in, length = x.shape
    c_out, _, k = w.shape
    if dy.shape != (n_batch, c_out, length):
        raise ShapeError(f"upstream gradient shape {dy.shape} != output shape {(n_batch, c_out, length)}")
    pad = (k - 1) // 2
    dtype = np.result_type(x, w, dy)
    dy = dy.astype(dtype, copy=False)
    db = dy.sum(axis=(0, 2))
    if k >= FFT_MIN_KERNEL:
        n = _fft_size(length, k)
        dyf = _freq_major(dy, n)                                         # [F, B, Cout]
        xf = _freq_major(x.astype(dtype, copy=False), n)                 # [F, B, Cin]
        # dw[o, c, j] = sum_{b,t} dy[b, o, t] x[b, c, t + j - pad]: a circular
        # cross-correlation, read at lags -pad..pad
        cross = np.matmul(np.ascontiguousarray(dyf.conj().transpose(0, 2, 1)), xf)  # [F, Cout, Cin]
        lags = sfft.irfft(cross, n, axis=0)
        idx = np.r_[n - pad:n, 0:pad + 1]
        dw = np.ascontiguousarray(lags[idx].transpose(1, 2, 0)).astype(dtype, copy=False)
        dx = None
        if need_dx:
            wf = _freq_major(w.astype(dtype, copy=False), n)              # [F, Cout, Cin]
            dx = _time_major_inverse(np.matmul(dyf, wf), n, pad, length).astype(dtype, copy=False)
        return dx, dw, db
    xp = np.pad(x.astype(dtype, copy=False), ((0, 0), (0, 0), (pad, pad)))
    rows = max(1, _COLUMN_BUDGET // (c_in * k))
    dw2 = np.zeros((c_out, c_in * k), dtype=dtype)
    for i in range(n_batch):
        for start, stop in _column_blocks(length, rows):
            dw2 += dy[i, :, start:stop] @ _columns(xp[i], k, start, stop).T
    dx = None
    if need_dx:
        # correlation of dy with the channel-transposed, time-reversed kernel
        w_adj = np.ascontiguousarray(w.transpose(1, 0, 2)[:, :, ::-1])
        dx = conv1d(dy, w_adj)
    return dx, dw2.reshape(c_out, c_in, k), db


def batchnorm_train(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float):
    """Normalize with per-channel batch statistics over (batch, time).

    Returns ``(y, mean, var, x_hat, inv_std)`` where ``var`` is the biased
    batch variance used for normalization.
    """
    n = x.shape[0] * x.shape[2]
    if n < 2:
        raise ShapeError(f"train-mode batchnorm needs batch*time >= 2 per channel, got {n}")
    mean = x.mean(axis=(0, 2))
    centered = x - mean[None, :, None]
    var = np.mean(centered * centered, axis=(0, 2))
    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = centered * inv_std[None, :, None]
    y = x_hat * gamma[None, :, None] + beta[None, :, None]
    return y, mean, var, x_hat, inv_std


def batchnorm_train_backward(dy: np.ndarray, x_hat: np.ndarray, inv_std: np.ndarray, gamma: np.ndarray):
    dbeta = dy.sum(axis=(0, 2))
    dgamma = (dy * x_hat).sum(axis=(0, 2))
    n = dy.shape[0] * dy.shape[2]
    dx = (gamma * inv_std)[None, :, None] * (
        dy - (dbeta / n)[None, :, None] - x_hat * (dgamma / n)[None, :, None]
    )
    return dx, dgamma, dbeta


def batchnorm_infer(x: np.ndarray, gamma, beta, running_mean, running_var, eps: float):
    scale = gamma / np.sqrt(running_var + eps)
    shift = beta - running_mean * scale
    return x * scale.astype(x.dtype)[None, :, None] + shift.astype(x.dtype)[None, :, None]


def leaky_relu(x: np.ndarray, alpha: float) -> np.ndarray:
    return np.where(x >= 0, x, alpha * x)


def leaky_relu_backward(dy: np.ndarray, x: np.ndarray, alpha: float) -> np.ndarray:
    return np.where(x >= 0, dy, alpha * dy)


def tanh_backward(dy: np.ndarray, y: np.ndarray) -> np.ndarray:
    return dy * (1.0 - y * y)
