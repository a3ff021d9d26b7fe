"""Numpy implementations of the inner loops (fallback for ``_ckernels``)."""
import numpy as np


def hamming_distances(queries: np.ndarray, gallery: np.ndarray) -> np.ndarray:
    out = np.zeros((queries.shape[0], gallery.shape[0]), dtype=np.int32)
    for w in range(queries.shape[1]):
        out += np.bitwise_count(queries[:, w, None] ^ gallery[None, :, w]).astype(np.int32)
    return out


def linear_hinge(x, w, ii, jj, lab, need_grad=True):
    pi = x[ii] @ w
    pj = x[jj] @ w
    s = lab.astype(np.float64)
    margin = 1.0 - s * pi * pj
    active = margin > 0.0
    total = float(margin[active].sum())
    n_zero = int(np.count_nonzero(margin == 0.0))
    if not need_grad:
        return total, np.zeros_like(w), n_zero
    sa = -s[active]
    grad = x[ii[active]].T @ (sa * pj[active]) + x[jj[active]].T @ (sa * pi[active])
    return total, grad, n_zero


def kernel_hinge(g, ii, jj, lab):
    s = lab.astype(np.float64)
    gi, gj = g[ii], g[jj]
    margin = 1.0 - s * gi * gj
    active = margin > 0.0
    coeff = np.zeros_like(g)
    np.add.at(coeff, ii[active], -s[active] * gj[active])
    np.add.at(coeff, jj[active], -s[active] * gi[active])
    return float(margin[active].sum()), coeff, int(np.count_nonzero(margin == 0.0))


def segment_dot(x, dims, offsets, weights):
    prod = x[:, dims] * weights
    return np.add.reduceat(prod, offsets[:-1], axis=1)
