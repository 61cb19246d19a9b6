"""Numba-compiled twins of the kernels in _kernels_np.

Same API, explicit loops, parallel over samples with disjoint writes so
results are reproducible run to run. fastmath stays off: these kernels feed
tests with 1e-12 style tolerances against the numpy reference.
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange

_OPTS = dict(cache=True, parallel=True)


@njit(**_OPTS)
def mse_rows(yhat, y):
    n, H, D = yhat.shape
    out = np.empty(n)
    for i in prange(n):
        acc = 0.0
        for h in range(H):
            for d in range(D):
                diff = yhat[i, h, d] - y[i, h, d]
                acc += diff * diff
        out[i] = acc / (H * D)
    return out


@njit(**_OPTS)
def linear_forward(W, b, X):
    n, L, D = X.shape
    H = W.shape[0]
    out = np.empty((n, H, D))
    for i in prange(n):
        for h in range(H):
            for d in range(D):
                acc = b[h]
                for l in range(L):
                    acc += W[h, l] * X[i, l, d]
                out[i, h, d] = acc
    return out


@njit(**_OPTS)
def linear_backward(X, Gy):
    n, L, D = X.shape
    H = Gy.shape[1]
    dW = np.zeros((H, L))
    db = np.zeros(H)
    for h in prange(H):
        for i in range(n):
            for d in range(D):
                g = Gy[i, h, d]
                db[h] += g
                for l in range(L):
                    dW[h, l] += g * X[i, l, d]
    return dW, db


@njit(**_OPTS)
def mlp_forward(W1, b1, W2, b2, W3, b3, X):
    n, L, D = X.shape
    E = W1.shape[0]
    H = W3.shape[0]
    H1 = np.empty((n, E, D))
    H2 = np.empty((n, E, D))
    Yhat = np.empty((n, H, D))
    for i in prange(n):
        for d in range(D):
            for e in range(E):
                acc = b1[e]
                for l in range(L):
                    acc += W1[e, l] * X[i, l, d]
                H1[i, e, d] = np.tanh(acc)
            for e in range(E):
                acc = b2[e]
                for f in range(E):
                    acc += W2[e, f] * H1[i, f, d]
                H2[i, e, d] = np.tanh(acc)
            for h in range(H):
                acc = b3[h]
                for e in range(E):
                    acc += W3[h, e] * H2[i, e, d]
                Yhat[i, h, d] = acc
    return H1, H2, Yhat


@njit(cache=True)
def mlp_backward(W1, W2, W3, X, H1, H2, G1, G2, Gy):
    n, L, D = X.shape
    E = W1.shape[0]
    H = W3.shape[0]
    dW1 = np.zeros((E, L))
    db1 = np.zeros(E)
    dW2 = np.zeros((E, E))
    db2 = np.zeros(E)
    dW3 = np.zeros((H, E))
    db3 = np.zeros(H)
    U2 = np.empty(E)
    U1 = np.empty(E)
    for i in range(n):
        for d in range(D):
            for h in range(H):
                g = Gy[i, h, d]
                db3[h] += g
                for e in range(E):
                    dW3[h, e] += g * H2[i, e, d]
            for e in range(E):
                acc = G2[i, e, d]
                for h in range(H):
                    acc += W3[h, e] * Gy[i, h, d]
                U2[e] = acc * (1.0 - H2[i, e, d] * H2[i, e, d])
            for e in range(E):
                v = U2[e]
                db2[e] += v
                for f in range(E):
                    dW2[e, f] += v * H1[i, f, d]
            for f in range(E):
                acc = G1[i, f, d]
                for e in range(E):
                    acc += W2[e, f] * U2[e]
                U1[f] = acc * (1.0 - H1[i, f, d] * H1[i, f, d])
            for e in range(E):
                v = U1[e]
                db1[e] += v
                for l in range(L):
                    dW1[e, l] += v * X[i, l, d]
    return dW1, db1, dW2, db2, dW3, db3


@njit(**_OPTS)
def masked_losses_linear(W, b, X, Y, ks):
    n, L, D = X.shape
    H = W.shape[0]
    S = ks.shape[0]
    out = np.empty((n, S))
    for i in prange(n):
        for s in range(S):
            k = ks[s]
            acc = 0.0
            for h in range(H):
                for d in range(D):
                    pred = b[h]
                    for l in range(k, L):
                        pred += W[h, l] * X[i, l, d]
                    diff = pred - Y[i, h, d]
                    acc += diff * diff
            out[i, s] = acc / (H * D)
    return out


@njit(**_OPTS)
def masked_losses_mlp(W1, b1, W2, b2, W3, b3, X, Y, ks):
    n, L, D = X.shape
    E = W1.shape[0]
    H = W3.shape[0]
    S = ks.shape[0]
    out = np.empty((n, S))
    for i in prange(n):
        h1 = np.empty(E)
        h2 = np.empty(E)
        for s in range(S):
            k = ks[s]
            acc = 0.0
            for d in range(D):
                for e in range(E):
                    a = b1[e]
                    for l in range(k, L):
                        a += W1[e, l] * X[i, l, d]
                    h1[e] = np.tanh(a)
                for e in range(E):
                    a = b2[e]
                    for f in range(E):
                        a += W2[e, f] * h1[f]
                    h2[e] = np.tanh(a)
                for h in range(H):
                    a = b3[h]
                    for e in range(E):
                        a += W3[h, e] * h2[e]
                    diff = a - Y[i, h, d]
                    acc += diff * diff
            out[i, s] = acc / (H * D)
    return out


@njit(**_OPTS)
def pairwise_sqdist(F):
    n, d = F.shape
    out = np.zeros((n, n))
    for i in prange(n):
        for j in range(i + 1, n):
            acc = 0.0
            for c in range(d):
                diff = F[i, c] - F[j, c]
                acc += diff * diff
            out[i, j] = acc
            out[j, i] = acc
    return out
