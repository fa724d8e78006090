"""Annealed importance sampling for ln Z of RBMs too large to enumerate.

The path runs from a base-rate model (visible biases only, no weights) to
the target along energies (1 - beta) E_base + beta E_target, with a linear
beta schedule. The hidden layer is summed out analytically in every
intermediate distribution, and one block Gibbs sweep is done per step.
The estimate is computed on the normal form of the target and shifted by
the constant that relates centered and normal energies.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logsumexp

from centering.rbm import RbmParams, softplus, to_normal
from centering.samplers import bernoulli, make_rng


@dataclass
class AisConfig:
    num_intermediate: int = 1000
    num_runs: int = 100
    # visible biases of the base-rate model; None means all zeros
    base_rate_biases: np.ndarray | None = None

    def __post_init__(self):
        if self.num_intermediate < 1 or self.num_runs < 1:
            raise ValueError("num_intermediate and num_runs must be >= 1")
        if self.base_rate_biases is not None:
            self.base_rate_biases = np.asarray(self.base_rate_biases, dtype=np.float64)

    def inv_temps(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.num_intermediate + 2)


@dataclass
class AisResult:
    log_z: float
    stderr: float
    log_weights: np.ndarray
    # set when any importance weight was not finite
    degenerate: bool = False

    def __iter__(self):
        return iter((self.log_z, self.stderr))


def base_log_partition(base_biases, n_hidden: int) -> float:
    """ln Z of the model with visible biases only (hidden units are free)."""
    return float(np.sum(softplus(base_biases)) + n_hidden * np.log(2.0))


def _log_f(q: RbmParams, base, x, beta):
    # unnormalized log marginal of the intermediate model at inverse temperature beta
    a = x @ q.W + q.c
    return x @ base + beta * (x @ (q.b - base)) + np.sum(softplus(beta * a), axis=-1)


def estimate_log_partition(p: RbmParams, cfg: AisConfig | None = None, seed=0) -> AisResult:
    """AIS estimate of ln Z with its delta-method standard error."""
    cfg = cfg or AisConfig()
    rng = make_rng(seed)
    q = to_normal(p)
    n, m = q.n_visible, q.n_hidden
    base = np.zeros(n) if cfg.base_rate_biases is None else cfg.base_rate_biases
    if base.shape != (n,):
        raise ValueError(f"base-rate biases must have length {n}")
    betas = cfg.inv_temps()
    x = bernoulli(rng, np.broadcast_to(expit(base), (cfg.num_runs, n)))
    log_w = np.zeros(cfg.num_runs)
    for k in range(1, betas.shape[0]):
        b_prev, b_k = betas[k - 1], betas[k]
        log_w += _log_f(q, base, x, b_k) - _log_f(q, base, x, b_prev)
        if k < betas.shape[0] - 1:
            h = bernoulli(rng, expit(b_k * (x @ q.W + q.c)))
            x = bernoulli(rng, expit(base + b_k * (q.b - base) + b_k * (h @ q.W.T)))
    finite = np.isfinite(log_w)
    degenerate = not bool(np.all(finite))
    lw = log_w[finite] if np.any(finite) else log_w
    log_mean = float(logsumexp(lw) - np.log(lw.shape[0]))
    w = np.exp(lw - lw.max())
    stderr = float(w.std() / (np.sqrt(lw.shape[0]) * w.mean())) if lw.shape[0] > 1 else float("inf")
    log_z = log_mean + base_log_partition(base, m) - p.energy_offset()
    return AisResult(log_z, stderr, log_w, degenerate)
