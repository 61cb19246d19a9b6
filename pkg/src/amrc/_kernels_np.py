"""Pure-numpy reference implementations of the hot numeric kernels.

Shapes: X (n, L, D) lookback batches, Y (n, H, D) horizon batches, weight
matrices row-major. Every function is a pure array-in/array-out operation;
the numba module mirrors this API exactly.
"""

from __future__ import annotations

import numpy as np


def mse_rows(yhat: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Per-sample mean squared error over all H*D entries: (n,)."""
    diff = yhat - y
    n = diff.shape[0]
    return np.einsum("nhd,nhd->n", diff, diff) / (diff.shape[1] * diff.shape[2])


def linear_forward(W: np.ndarray, b: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Channel-shared affine map: yhat[:, :, c] = W @ x[:, :, c] + b."""
    return np.einsum("hl,nld->nhd", W, X) + b[None, :, None]


def linear_backward(X: np.ndarray, Gy: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    dW = np.einsum("nhd,nld->hl", Gy, X)
    db = Gy.sum(axis=(0, 2))
    return dW, db


def mlp_forward(W1, b1, W2, b2, W3, b3, X):
    """Two tanh layers plus affine head, shared across channels.

    Returns (H1, H2, Yhat): the embedding tap (n, E, D), the backbone tap
    (n, E, D) and the prediction (n, H, D).
    """
    H1 = np.tanh(np.einsum("el,nld->ned", W1, X) + b1[None, :, None])
    H2 = np.tanh(np.einsum("ef,nfd->ned", W2, H1) + b2[None, :, None])
    Yhat = np.einsum("he,ned->nhd", W3, H2) + b3[None, :, None]
    return H1, H2, Yhat


def mlp_backward(W1, W2, W3, X, H1, H2, G1, G2, Gy):
    """Backprop through mlp_forward.

    G1/G2/Gy are upstream gradients on the embedding tap, backbone tap and
    prediction. Returns (dW1, db1, dW2, db2, dW3, db3).
    """
    dW3 = np.einsum("nhd,ned->he", Gy, H2)
    db3 = Gy.sum(axis=(0, 2))
    U2 = np.einsum("he,nhd->ned", W3, Gy) + G2
    V2 = U2 * (1.0 - H2 * H2)
    dW2 = np.einsum("ned,nfd->ef", V2, H1)
    db2 = V2.sum(axis=(0, 2))
    U1 = np.einsum("ef,ned->nfd", W2, V2) + G1
    V1 = U1 * (1.0 - H1 * H1)
    dW1 = np.einsum("ned,nld->el", V1, X)
    db1 = V1.sum(axis=(0, 2))
    return dW1, db1, dW2, db2, dW3, db3


def masked_losses_linear(W, b, X, Y, ks) -> np.ndarray:
    """Per-sample prediction MSE for each prefix-mask length in ks: (n, S).

    Zeroing the oldest k rows is equivalent to dropping their weight
    columns, so each column works on the unmasked suffix view.
    """
    n = X.shape[0]
    out = np.empty((n, len(ks)))
    for s, k in enumerate(ks):
        yhat = np.einsum("hl,nld->nhd", W[:, k:], X[:, k:, :]) + b[None, :, None]
        out[:, s] = mse_rows(yhat, Y)
    return out


def masked_losses_mlp(W1, b1, W2, b2, W3, b3, X, Y, ks) -> np.ndarray:
    """Per-sample prediction MSE of the mlp for each mask length in ks."""
    n = X.shape[0]
    out = np.empty((n, len(ks)))
    for s, k in enumerate(ks):
        H1 = np.tanh(
            np.einsum("el,nld->ned", W1[:, k:], X[:, k:, :]) + b1[None, :, None]
        )
        H2 = np.tanh(np.einsum("ef,nfd->ned", W2, H1) + b2[None, :, None])
        yhat = np.einsum("he,ned->nhd", W3, H2) + b3[None, :, None]
        out[:, s] = mse_rows(yhat, Y)
    return out


def pairwise_sqdist(F: np.ndarray) -> np.ndarray:
    """Symmetric matrix of squared euclidean distances between rows of F.

    The upper triangle is mirrored into the lower one so symmetry is exact,
    not merely within rounding.
    """
    sq = np.einsum("nd,nd->n", F, F)
    out = sq[:, None] + sq[None, :] - 2.0 * (F @ F.T)
    np.maximum(out, 0.0, out=out)
    np.fill_diagonal(out, 0.0)
    iu = np.triu_indices(F.shape[0], 1)
    out.T[iu] = out[iu]
    return out
