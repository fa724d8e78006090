"""Centered binary RBM: parameters, energy, conditionals, offset transforms.

The energy of a centered RBM is

    E(x, h) = -(x - mu)^T b - c^T (h - lam) - (x - mu)^T W (h - lam)

with ``W`` of shape (N, M) (row ``i`` belongs to visible unit ``i``). Zero
offsets give the ordinary binary RBM, so one type covers both.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

# sigma^-1 is evaluated on means clamped to this interval
LOGIT_CLAMP = 1e-4
INIT_STD = 0.01


def sigmoid(a):
    return expit(a)


def logit(p, clamp: float = LOGIT_CLAMP):
    p = np.clip(np.asarray(p, dtype=np.float64), clamp, 1.0 - clamp)
    return np.log(p) - np.log1p(-p)


def softplus(a):
    return np.logaddexp(0.0, a)


@dataclass
class RbmParams:
    W: np.ndarray
    b: np.ndarray
    c: np.ndarray
    mu: np.ndarray
    lam: np.ndarray

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        self.c = np.asarray(self.c, dtype=np.float64)
        self.mu = np.asarray(self.mu, dtype=np.float64)
        self.lam = np.asarray(self.lam, dtype=np.float64)
        if self.W.ndim != 2:
            raise ValueError("W must be a matrix")
        n, m = self.W.shape
        if self.b.shape != (n,) or self.mu.shape != (n,):
            raise ValueError(f"visible vectors must have length {n}")
        if self.c.shape != (m,) or self.lam.shape != (m,):
            raise ValueError(f"hidden vectors must have length {m}")
        _check_offsets(self.mu, self.lam)

    @property
    def n_visible(self) -> int:
        return self.W.shape[0]

    @property
    def n_hidden(self) -> int:
        return self.W.shape[1]

    @classmethod
    def zeros(cls, n_visible: int, n_hidden: int) -> "RbmParams":
        return cls(np.zeros((n_visible, n_hidden)), np.zeros(n_visible),
                   np.zeros(n_hidden), np.zeros(n_visible), np.zeros(n_hidden))

    def copy(self) -> "RbmParams":
        return RbmParams(self.W.copy(), self.b.copy(), self.c.copy(),
                         self.mu.copy(), self.lam.copy())

    def is_normal(self) -> bool:
        return not (np.any(self.mu) or np.any(self.lam))

    def transposed(self) -> "RbmParams":
        """Same model with the roles of visible and hidden layer swapped."""
        return RbmParams(self.W.T.copy(), self.c.copy(), self.b.copy(),
                         self.lam.copy(), self.mu.copy())

    def energy_offset(self) -> float:
        """Constant K with E_centered(x, h) = E_normal(x, h) + K.

        E_normal is the energy of ``reparameterize(self, 0, 0)``.
        """
        return float(self.mu @ self.b + self.c @ self.lam - self.mu @ self.W @ self.lam)


@dataclass
class BatchStats:
    """Data- and model-side sufficient statistics for one gradient step.

    ``corr_d`` and ``corr_m`` are raw second moments <x h^T>; centered
    products for any offsets are derived by :meth:`centered_corr_d` /
    :meth:`centered_corr_m`.
    """

    mean_x_d: np.ndarray
    mean_h_d: np.ndarray
    mean_x_m: np.ndarray
    mean_h_m: np.ndarray
    corr_d: np.ndarray
    corr_m: np.ndarray

    def __post_init__(self):
        n, m = np.shape(self.corr_d)
        if np.shape(self.corr_m) != (n, m):
            raise ValueError("second-moment shapes differ")
        for v, k in ((self.mean_x_d, n), (self.mean_x_m, n),
                     (self.mean_h_d, m), (self.mean_h_m, m)):
            if np.shape(v) != (k,):
                raise ValueError("mean vector does not match second-moment shape")

    def centered_corr_d(self, mu, lam) -> np.ndarray:
        return _centered(self.corr_d, self.mean_x_d, self.mean_h_d, mu, lam)

    def centered_corr_m(self, mu, lam) -> np.ndarray:
        return _centered(self.corr_m, self.mean_x_m, self.mean_h_m, mu, lam)


def _centered(corr, mx, mh, mu, lam):
    # <(x - mu)(h - lam)^T> expanded in raw moments
    return corr - np.outer(mu, mh) - np.outer(mx, lam) + np.outer(mu, lam)


def _check_offsets(mu, lam):
    if np.any(mu < 0.0) or np.any(mu > 1.0) or np.any(lam < 0.0) or np.any(lam > 1.0):
        raise ValueError("offsets must lie in [0, 1]")


def _check_len(v, n, what):
    if np.shape(v)[-1] != n:
        raise ValueError(f"{what} has length {np.shape(v)[-1]}, expected {n}")


def energy(p: RbmParams, x, h):
    """Energy of (batches of) joint states; leading axes broadcast."""
    x = np.asarray(x, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    _check_len(x, p.n_visible, "x")
    _check_len(h, p.n_hidden, "h")
    xc = x - p.mu
    hc = h - p.lam
    return -(xc @ p.b) - (hc @ p.c) - np.sum((xc @ p.W) * hc, axis=-1)


def hidden_input(p: RbmParams, x):
    return (x - p.mu) @ p.W + p.c


def visible_input(p: RbmParams, h):
    return (h - p.lam) @ p.W.T + p.b


def prob_h_given_x(p: RbmParams, x, beta: float = 1.0):
    x = np.asarray(x, dtype=np.float64)
    _check_len(x, p.n_visible, "x")
    return expit(beta * hidden_input(p, x))


def prob_x_given_h(p: RbmParams, h, beta: float = 1.0):
    h = np.asarray(h, dtype=np.float64)
    _check_len(h, p.n_hidden, "h")
    return expit(beta * visible_input(p, h))


def neg_free_energy_x(p: RbmParams, x, beta: float = 1.0):
    """log sum_h exp(-beta E(x, h)) for each row of ``x``."""
    a = beta * hidden_input(p, x)
    return beta * ((x - p.mu) @ p.b) + np.sum(softplus(a) - p.lam * a, axis=-1)


def neg_free_energy_h(p: RbmParams, h):
    """log sum_x exp(-E(x, h)) for each row of ``h``."""
    a = visible_input(p, h)
    return (h - p.lam) @ p.c + np.sum(softplus(a) - p.mu * a, axis=-1)


def reparameterize(p: RbmParams, mu_new, lam_new) -> RbmParams:
    """Change offsets while keeping the modeled distribution fixed."""
    mu_new = np.asarray(mu_new, dtype=np.float64)
    lam_new = np.asarray(lam_new, dtype=np.float64)
    _check_len(mu_new, p.n_visible, "mu_new")
    _check_len(lam_new, p.n_hidden, "lam_new")
    _check_offsets(mu_new, lam_new)
    return RbmParams(p.W.copy(),
                     p.b + p.W @ (lam_new - p.lam),
                     p.c + p.W.T @ (mu_new - p.mu),
                     mu_new.copy(), lam_new.copy())


def to_normal(p: RbmParams) -> RbmParams:
    return reparameterize(p, np.zeros(p.n_visible), np.zeros(p.n_hidden))


def init_params(mean_x, n_hidden: int, rng: np.random.Generator, *,
                bias_init: str = "inverse_sigmoid", mu=None, lam=None) -> RbmParams:
    """Initial parameters.

    W ~ N(0, 0.01^2); b = sigma^-1(<x>_d) (clamped) or 0 with
    ``bias_init="zero"``; c = sigma^-1(0.5) = 0. Offsets default to the data
    mean and 0.5; pass explicit ``mu``/``lam`` (e.g. zeros) for other
    centering variants.
    """
    mean_x = np.asarray(mean_x, dtype=np.float64)
    n = mean_x.shape[0]
    W = rng.normal(0.0, INIT_STD, size=(n, n_hidden))
    if bias_init == "inverse_sigmoid":
        b = logit(mean_x)
    elif bias_init == "zero":
        b = np.zeros(n)
    else:
        raise ValueError(f"unknown bias_init {bias_init!r}")
    mu = mean_x.copy() if mu is None else np.broadcast_to(np.asarray(mu, float), (n,)).copy()
    lam = np.full(n_hidden, 0.5) if lam is None else \
        np.broadcast_to(np.asarray(lam, float), (n_hidden,)).copy()
    return RbmParams(W, b, np.zeros(n_hidden), mu, lam)


def flip_params(p: RbmParams, flip_visible, flip_hidden) -> RbmParams:
    """Parameters of the model with the given units (and their offsets) flipped.

    With offsets flipped alongside the variables, sign changes of W, b, c give
    E(x, h) = E~(x~, h~) for every state.
    """
    fv = np.asarray(flip_visible, dtype=bool)
    fh = np.asarray(flip_hidden, dtype=bool)
    sv = np.where(fv, -1.0, 1.0)
    sh = np.where(fh, -1.0, 1.0)
    return RbmParams(sv[:, None] * p.W * sh[None, :], sv * p.b, sh * p.c,
                     np.where(fv, 1.0 - p.mu, p.mu), np.where(fh, 1.0 - p.lam, p.lam))


def flip_states(s, mask):
    s = np.asarray(s, dtype=np.float64)
    return np.where(np.asarray(mask, dtype=bool), 1.0 - s, s)
