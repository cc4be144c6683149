"""Fused loops for the elementwise hot paths (LIF recurrence, batch norm).

These compute exactly the same arithmetic as the reference numpy
expressions in :mod:`snnpar.neuron` and :mod:`snnpar.autodiff`, one pass per
array instead of one pass per numpy operation.
"""
from __future__ import annotations

import numpy as np
from numba import njit

@njit(cache=True)
def lif_forward(x, inv_tau, u_rest, u_th, u_r, R):
    """Hard-reset LIF over axis 0; returns spikes and pre-reset membrane minus threshold."""
    # scalars arrive in x's dtype so float32 inputs stay in float32 arithmetic
    T, n = x.shape
    out = np.empty_like(x)
    v = np.empty_like(x)
    u = np.full(n, u_rest, dtype=x.dtype)
    for t in range(T):
        for i in range(n):
            h = u[i] + inv_tau * (-(u[i] - u_rest) + R * x[t, i])
            v[t, i] = h - u_th
            spike = h >= u_th
            out[t, i] = 1.0 if spike else 0.0
            u[i] = u_r if spike else h
    return out, v


@njit(cache=True)
def lif_backward(g, out, sg, decay, gain):
    T, n = g.shape
    dx = np.empty_like(g)
    du = np.zeros(n, dtype=g.dtype)
    for t in range(T - 1, -1, -1):
        for i in range(n):
            dh = g[t, i] * sg[t, i] + du[i] * (1.0 - out[t, i])
            dx[t, i] = dh * gain
            du[i] = dh * decay
    return dx


@njit(cache=True)
def bn_stats(x3):
    B, C, N = x3.shape
    mu = np.zeros(C, dtype=np.float64)
    sq = np.zeros(C, dtype=np.float64)
    for b in range(B):
        for c in range(C):
            s = 0.0
            for k in range(N):
                s += x3[b, c, k]
            mu[c] += s
    n = B * N
    for c in range(C):
        mu[c] /= n
    for b in range(B):
        for c in range(C):
            m = mu[c]
            s = 0.0
            for k in range(N):
                d = x3[b, c, k] - m
                s += d * d
            sq[c] += s
    for c in range(C):
        sq[c] /= n
    return mu, sq


@njit(cache=True)
def bn_apply(x3, mu, inv, gamma, beta):
    B, C, N = x3.shape
    xhat = np.empty_like(x3)
    out = np.empty_like(x3)
    for b in range(B):
        for c in range(C):
            m = mu[c]
            iv = inv[c]
            ga = gamma[c]
            be = beta[c]
            for k in range(N):
                v = (x3[b, c, k] - m) * iv
                xhat[b, c, k] = v
                out[b, c, k] = v * ga + be
    return xhat, out


@njit(cache=True)
def bn_backward(g3, xhat, scale, training):
    B, C, N = g3.shape
    dbeta = np.zeros(C, dtype=np.float64)
    dgamma = np.zeros(C, dtype=np.float64)
    for b in range(B):
        for c in range(C):
            s1 = 0.0
            s2 = 0.0
            for k in range(N):
                s1 += g3[b, c, k]
                s2 += g3[b, c, k] * xhat[b, c, k]
            dbeta[c] += s1
            dgamma[c] += s2
    n = B * N
    dx = np.empty_like(g3)
    for b in range(B):
        for c in range(C):
            sc = scale[c]
            if training:
                mb = dbeta[c] / n
                mg = dgamma[c] / n
                for k in range(N):
                    dx[b, c, k] = sc * (g3[b, c, k] - mb - xhat[b, c, k] * mg)
            else:
                for k in range(N):
                    dx[b, c, k] = sc * g3[b, c, k]
    return dx, dgamma, dbeta
