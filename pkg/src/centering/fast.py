"""Compiled inner loop for the common training configuration.

Covers full-batch training of centered RBMs with CD, PCD or PT sampling,
probability-based statistics and the deterministic offset sources
(zero, data, model, average, fixed half). Uniform random numbers are drawn
from the chain's own generator in the order the numpy path consumes them,
so both paths follow the same trajectory up to rounding.
"""

from __future__ import annotations

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

SOURCE_CODES = {"zero": 0, "data_mean": 1, "model_mean": 2, "average_dm": 3, "fixed_half": 4}
KIND_CODES = {"cd": 0, "pcd": 1, "pt": 2}


def _jit(f):
    return numba.njit(cache=True)(f) if numba is not None else f


def available() -> bool:
    return numba is not None


def uniforms_per_step(kind: str, k: int, n_v: int, n_h: int, n_particles: int, n_temps: int,
                      round_index: int) -> int:
    if kind in ("cd", "pcd"):
        return k * n_particles * (n_v + n_h)
    n_pairs = len(range(round_index % 2, n_temps - 1, 2))
    return n_temps * n_particles * (n_v + n_h) + n_pairs * n_particles


@_jit
def sig(a):
    if a >= 0:
        return 1.0 / (1.0 + np.exp(-a))
    e = np.exp(a)
    return e / (1.0 + e)


@_jit
def gibbs(W, b, c, mu, lam, x, h, beta, u, pos):
    n, m = W.shape
    P = x.shape[0]
    for p in range(P):
        for j in range(m):
            a = c[j]
            for i in range(n):
                a += (x[p, i] - mu[i]) * W[i, j]
            h[p, j] = 1.0 if u[pos + p * m + j] < sig(beta * a) else 0.0
    pos += P * m
    for p in range(P):
        for i in range(n):
            a = b[i]
            for j in range(m):
                a += (h[p, j] - lam[j]) * W[i, j]
            x[p, i] = 1.0 if u[pos + p * n + i] < sig(beta * a) else 0.0
    return pos + P * n


@_jit
def energy(W, b, c, mu, lam, x, h):
    n, m = W.shape
    e = 0.0
    for i in range(n):
        xi = x[i] - mu[i]
        e -= xi * b[i]
        for j in range(m):
            e -= xi * W[i, j] * (h[j] - lam[j])
    for j in range(m):
        e -= c[j] * (h[j] - lam[j])
    return e


@_jit
def hidden_probs(W, c, mu, x, out):
    n, m = W.shape
    for p in range(x.shape[0]):
        for j in range(m):
            a = c[j]
            for i in range(n):
                a += (x[p, i] - mu[i]) * W[i, j]
            out[p, j] = sig(a)


@_jit
def source(code, d, mdl, out):
    for i in range(out.shape[0]):
        if code == 0:
            out[i] = 0.0
        elif code == 1:
            out[i] = d[i]
        elif code == 2:
            out[i] = mdl[i]
        elif code == 3:
            out[i] = 0.5 * (d[i] + mdl[i])
        else:
            out[i] = 0.5


@_jit
def shift(W, b, c, mu, lam, mu_new, lam_new, nu_mu, nu_lam):
    n, m = W.shape
    for i in range(n):
        s = 0.0
        for j in range(m):
            s += W[i, j] * (nu_lam * (lam_new[j] - lam[j]))
        b[i] += s
    for j in range(m):
        s = 0.0
        for i in range(n):
            s += W[i, j] * (nu_mu * (mu_new[i] - mu[i]))
        c[j] += s
    for i in range(n):
        mu[i] = min(1.0, max(0.0, (1.0 - nu_mu) * mu[i] + nu_mu * mu_new[i]))
    for j in range(m):
        lam[j] = min(1.0, max(0.0, (1.0 - nu_lam) * lam[j] + nu_lam * lam_new[j]))


@_jit
def run_block(W, b, c, mu, lam, data, xs, hs, betas, rounds, u, n_steps, kind, k,
              src_v, src_h, nu_mu, nu_lam, before, eta, counters, grad_norm):
    n, m = W.shape
    Pd = data.shape[0]
    R, P = xs.shape[0], xs.shape[1]
    hd = np.empty((Pd, m))
    hm = np.empty((P, m))
    xm_cd = np.empty((Pd, n))
    hm_cd = np.empty((Pd, m))
    mxd = np.empty(n)
    mhd = np.empty(m)
    mxm = np.empty(n)
    mhm = np.empty(m)
    cd = np.empty((n, m))
    cm = np.empty((n, m))
    mu_new = np.empty(n)
    lam_new = np.empty(m)
    dW = np.empty((n, m))
    pos = 0
    for _ in range(n_steps):
        # model-side particles
        if kind == 0:
            xm_cd[:, :] = data
            for _s in range(k):
                pos = gibbs(W, b, c, mu, lam, xm_cd, hm_cd, 1.0, u, pos)
            xm = xm_cd
        elif kind == 1:
            for _s in range(k):
                pos = gibbs(W, b, c, mu, lam, xs[0], hs[0], 1.0, u, pos)
            xm = xs[0]
        else:
            # sweep all replicas: hidden draws for all first, as in the numpy path
            for r in range(R):
                for p in range(P):
                    for j in range(m):
                        a = c[j]
                        for i in range(n):
                            a += (xs[r, p, i] - mu[i]) * W[i, j]
                        hs[r, p, j] = 1.0 if u[pos + (r * P + p) * m + j] < sig(betas[r] * a) else 0.0
            pos += R * P * m
            for r in range(R):
                for p in range(P):
                    for i in range(n):
                        a = b[i]
                        for j in range(m):
                            a += (hs[r, p, j] - lam[j]) * W[i, j]
                        xs[r, p, i] = 1.0 if u[pos + (r * P + p) * n + i] < sig(betas[r] * a) else 0.0
            pos += R * P * n
            start = rounds % 2
            q = 0
            for lo in range(start, R - 1, 2):
                hi = lo + 1
                for p in range(P):
                    e_lo = energy(W, b, c, mu, lam, xs[lo, p], hs[lo, p])
                    e_hi = energy(W, b, c, mu, lam, xs[hi, p], hs[hi, p])
                    log_r = (betas[lo] - betas[hi]) * (e_lo - e_hi)
                    counters[1] += 1
                    if np.log(u[pos + q * P + p]) < log_r:
                        counters[0] += 1
                        for i in range(n):
                            t = xs[lo, p, i]
                            xs[lo, p, i] = xs[hi, p, i]
                            xs[hi, p, i] = t
                        for j in range(m):
                            t = hs[lo, p, j]
                            hs[lo, p, j] = hs[hi, p, j]
                            hs[hi, p, j] = t
                q += 1
            pos += q * P
            rounds += 1
            xm = xs[R - 1]
        Pm = xm.shape[0]
        hmv = hm if kind != 0 else hm_cd
        hidden_probs(W, c, mu, data, hd)
        hidden_probs(W, c, mu, xm, hmv)
        # raw moments
        for i in range(n):
            s = 0.0
            for p in range(Pd):
                s += data[p, i]
            mxd[i] = s / Pd
            s = 0.0
            for p in range(Pm):
                s += xm[p, i]
            mxm[i] = s / Pm
        for j in range(m):
            s = 0.0
            for p in range(Pd):
                s += hd[p, j]
            mhd[j] = s / Pd
            s = 0.0
            for p in range(Pm):
                s += hmv[p, j]
            mhm[j] = s / Pm
        for i in range(n):
            for j in range(m):
                s = 0.0
                for p in range(Pd):
                    s += data[p, i] * hd[p, j]
                cd[i, j] = s / Pd
                s = 0.0
                for p in range(Pm):
                    s += xm[p, i] * hmv[p, j]
                cm[i, j] = s / Pm
        source(src_v, mxd, mxm, mu_new)
        source(src_h, mhd, mhm, lam_new)
        if before:
            shift(W, b, c, mu, lam, mu_new, lam_new, nu_mu, nu_lam)
        gn = 0.0
        for i in range(n):
            for j in range(m):
                g = (cd[i, j] - mu[i] * mhd[j] - mxd[i] * lam[j]) \
                    - (cm[i, j] - mu[i] * mhm[j] - mxm[i] * lam[j])
                dW[i, j] = g
                gn += g * g
        grad_norm[0] = np.sqrt(gn)
        for i in range(n):
            for j in range(m):
                W[i, j] += eta * dW[i, j]
        for i in range(n):
            b[i] += eta * (mxd[i] - mxm[i])
        for j in range(m):
            c[j] += eta * (mhd[j] - mhm[j])
        if not before:
            shift(W, b, c, mu, lam, mu_new, lam_new, nu_mu, nu_lam)
    return rounds, pos


def kernel():
    if numba is None:
        raise RuntimeError("numba is not installed")
    return run_block
