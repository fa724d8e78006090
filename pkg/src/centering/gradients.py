"""Parameter-update rules computed from batch statistics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from centering.rbm import BatchStats, RbmParams, prob_h_given_x


@dataclass
class GradientEstimate:
    dW: np.ndarray
    db: np.ndarray
    dc: np.ndarray
    rule: str = "standard"

    def flat(self) -> np.ndarray:
        """Concatenation (W row-major, b, c); same order as the Fisher index."""
        return np.concatenate([self.dW.reshape(-1), self.db, self.dc])

    def norm(self) -> float:
        return float(np.linalg.norm(self.flat()))

    def scaled(self, s: float) -> "GradientEstimate":
        return GradientEstimate(self.dW * s, self.db * s, self.dc * s, self.rule)

    @classmethod
    def from_flat(cls, v, n_visible: int, n_hidden: int, rule: str) -> "GradientEstimate":
        nm = n_visible * n_hidden
        v = np.asarray(v, dtype=np.float64)
        return cls(v[:nm].reshape(n_visible, n_hidden).copy(),
                   v[nm:nm + n_visible].copy(), v[nm + n_visible:].copy(), rule)


def _check_stats(p: RbmParams, s: BatchStats):
    if s.corr_d.shape != p.W.shape:
        raise ValueError(f"stats shape {s.corr_d.shape} does not match W {p.W.shape}")


def centered_ll_gradient(p: RbmParams, s: BatchStats) -> GradientEstimate:
    """LL gradient of a centered RBM w.r.t. its own parameters (offsets p.mu, p.lam)."""
    _check_stats(p, s)
    dW = s.centered_corr_d(p.mu, p.lam) - s.centered_corr_m(p.mu, p.lam)
    return GradientEstimate(dW, s.mean_x_d - s.mean_x_m, s.mean_h_d - s.mean_h_m,
                            rule="standard" if p.is_normal() else "centered")


def standard_gradient(s: BatchStats) -> GradientEstimate:
    return GradientEstimate(s.corr_d - s.corr_m, s.mean_x_d - s.mean_x_m,
                            s.mean_h_d - s.mean_h_m, rule="standard")


def centered_gradient(p: RbmParams, s: BatchStats, mu, lam) -> GradientEstimate:
    """Centered update for a normal RBM, offsets living only in the rule."""
    _check_stats(p, s)
    if not p.is_normal():
        raise ValueError("centered_gradient expects a normal RBM (zero offsets)")
    mu = np.asarray(mu, dtype=np.float64)
    lam = np.asarray(lam, dtype=np.float64)
    dW = s.centered_corr_d(mu, lam) - s.centered_corr_m(mu, lam)
    return GradientEstimate(dW,
                            s.mean_x_d - s.mean_x_m - dW @ lam,
                            s.mean_h_d - s.mean_h_m - dW.T @ mu,
                            rule="centered")


def enhanced_gradient(s: BatchStats) -> GradientEstimate:
    """Covariance-difference weight update with averaged-mean bias corrections."""
    cov_d = s.corr_d - np.outer(s.mean_x_d, s.mean_h_d)
    cov_m = s.corr_m - np.outer(s.mean_x_m, s.mean_h_m)
    dW = cov_d - cov_m
    return GradientEstimate(dW,
                            s.mean_x_d - s.mean_x_m - dW @ (0.5 * (s.mean_h_d + s.mean_h_m)),
                            s.mean_h_d - s.mean_h_m - dW.T @ (0.5 * (s.mean_x_d + s.mean_x_m)),
                            rule="enhanced")


def _moments(x, h, w=None):
    if w is None:
        n = x.shape[0]
        return x.mean(axis=0), h.mean(axis=0), x.T @ h / n
    w = np.asarray(w, dtype=np.float64) / np.sum(w)
    return w @ x, w @ h, (x * w[:, None]).T @ h


def compute_batch_stats(p: RbmParams, data_batch, model_batch, use_probabilities: bool = True,
                        *, rng: np.random.Generator | None = None, h_data=None, h_model=None,
                        data_weights=None) -> BatchStats:
    """Sufficient statistics from a data batch and a batch of fantasy particles.

    Hidden quantities are conditional probabilities p(h|x) by default
    (Rao-Blackwellized); with ``use_probabilities=False`` they are binary
    samples, either passed in (``h_data``/``h_model``) or drawn with ``rng``.
    """
    x_d = np.atleast_2d(np.asarray(data_batch, dtype=np.float64))
    x_m = np.atleast_2d(np.asarray(model_batch, dtype=np.float64))
    if x_d.shape[0] == 0 or x_m.shape[0] == 0:
        raise ValueError("batches must be non-empty")
    hp_d = prob_h_given_x(p, x_d)
    hp_m = prob_h_given_x(p, x_m)
    if use_probabilities:
        hd, hm = hp_d, hp_m
    else:
        if (h_data is None or h_model is None) and rng is None:
            raise ValueError("sampled statistics need an rng or explicit hidden states")
        hd = h_data if h_data is not None else (rng.random(hp_d.shape) < hp_d).astype(np.float64)
        hm = h_model if h_model is not None else (rng.random(hp_m.shape) < hp_m).astype(np.float64)
    mxd, mhd, cd = _moments(x_d, hd, data_weights)
    mxm, mhm, cm = _moments(x_m, hm)
    return BatchStats(mxd, mhd, mxm, mhm, cd, cm)
