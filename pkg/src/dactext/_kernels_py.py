"""Pure numpy implementations of the hot kernels.

These mirror the compiled versions in ``_kernels.pyx`` argument for argument.
They are used when the extension is not built, or when
``DACTEXT_PURE_PYTHON=1`` is set in the environment.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def conv_relu_maxpool(x, lengths, kernel, bias):
    """Valid 1-d convolution, ReLU and max-over-time in one pass.

    Parameters
    ----------
    x : ndarray, shape (B, L, D)
        Embedded documents, right-padded to a common length ``L``.
    lengths : ndarray of int64, shape (B,)
        True length of each document; every length must be >= filter width.
    kernel : ndarray, shape (F, w, D)
    bias : ndarray, shape (F,)

    Returns
    -------
    pooled : ndarray, shape (B, F)
        ``max(0, max_t conv[b, t, f])`` over the valid positions of each document.
    argmax : ndarray of int64, shape (B, F)
        Time index of the pre-activation maximum, lowest index on ties.
    """
    B, L, D = x.shape
    F, w, _ = kernel.shape
    T = L - w + 1
    win = sliding_window_view(x, w, axis=1)  # (B, T, D, w)
    cols = np.ascontiguousarray(win.transpose(0, 1, 3, 2)).reshape(B * T, w * D)
    conv = (cols @ kernel.reshape(F, w * D).T).reshape(B, T, F) + bias
    valid = np.arange(T)[None, :] < (lengths - w + 1)[:, None]
    conv = np.where(valid[:, :, None], conv, -np.inf)
    argmax = conv.argmax(axis=1)
    premax = np.take_along_axis(conv, argmax[:, None, :], axis=1)[:, 0, :]
    return np.maximum(premax, 0.0), argmax.astype(np.int64)


def conv_maxpool_backward(x, argmax, pooled, gpool, kernel):
    """Backward of :func:`conv_relu_maxpool`.

    Only the argmax window of each (document, filter) pair receives gradient,
    and only when the ReLU was active.

    Returns
    -------
    dx : ndarray, shape (B, L, D)
    dkernel : ndarray, shape (F, w, D)
    dbias : ndarray, shape (F,)
    """
    B, L, D = x.shape
    F, w, _ = kernel.shape
    g = np.where(pooled > 0.0, gpool, 0.0)
    dbias = g.sum(axis=0)
    pos = argmax[:, :, None] + np.arange(w)[None, None, :]  # (B, F, w)
    bi = np.arange(B)[:, None, None]
    xw = x[bi, pos]  # (B, F, w, D)
    dkernel = np.einsum("bf,bfjd->fjd", g, xw)
    dx = np.zeros_like(x)
    np.add.at(dx, (np.broadcast_to(bi, pos.shape), pos), g[:, :, None, None] * kernel[None])
    return dx, dkernel, dbias


def scatter_add_rows(out, ids, grads):
    """``out[ids[b, t]] += grads[b, t]`` with repeated ids accumulating."""
    D = out.shape[1]
    np.add.at(out, ids.reshape(-1), grads.reshape(-1, D))


def fisher_2x3_sums(r0, c0, c1, c2, logp_obs, tol, lgam):
    """Enumerate every 2x3 table with the given margins.

    ``lgam[i]`` must hold ``log(i!)`` for ``0 <= i <= n``.

    Returns
    -------
    rel_sum : float
        Sum of ``exp(logp - logp_obs)`` over tables with ``logp <= logp_obs + tol``.
    excluded : float
        Sum of the probabilities of the remaining (more probable) tables.
    """
    n = c0 + c1 + c2
    r1 = n - r0
    const = lgam[r0] + lgam[r1] + lgam[c0] + lgam[c1] + lgam[c2] - lgam[n]
    rel_sum = 0.0
    excluded = 0.0
    for a in range(max(0, r0 - c1 - c2), min(r0, c0) + 1):
        lo = max(0, r0 - a - c2)
        hi = min(r0 - a, c1)
        if hi < lo:
            continue
        b = np.arange(lo, hi + 1)
        c = r0 - a - b
        lp = (const - lgam[a] - lgam[b] - lgam[c]
              - lgam[c0 - a] - lgam[c1 - b] - lgam[c2 - c])
        keep = lp <= logp_obs + tol
        rel_sum += np.exp(lp[keep] - logp_obs).sum()
        excluded += np.exp(lp[~keep]).sum()
    return float(rel_sum), float(excluded)
