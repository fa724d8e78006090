"""Centered three-layer autoencoder with sigmoid units.

    h = sigmoid((x - mu) W_enc + c),    x_rec = sigmoid((h - lam) W^T + b)

With tied weights ``W_enc`` is ``W``. The encoder offset ``mu`` is fixed to
the training-data mean; the decoder offset ``lam`` follows a moving average
of the hidden means, with ``b`` shifted so the decoder output is unchanged.
Offsets are constants for back-propagation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from centering.rbm import INIT_STD, logit
from centering.samplers import make_rng

CE_CLAMP = 1e-7
LOSSES = ("cross_entropy", "squared_error")


@dataclass
class AeParams:
    W: np.ndarray
    b: np.ndarray
    c: np.ndarray
    mu: np.ndarray
    lam: np.ndarray
    # separate encoder matrix (N x M); None means tied weights
    W_enc: np.ndarray | None = None

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        n, m = self.W.shape
        self.b, self.mu = np.asarray(self.b, float), np.asarray(self.mu, float)
        self.c, self.lam = np.asarray(self.c, float), np.asarray(self.lam, float)
        if self.b.shape != (n,) or self.mu.shape != (n,):
            raise ValueError(f"input-side vectors must have length {n}")
        if self.c.shape != (m,) or self.lam.shape != (m,):
            raise ValueError(f"hidden-side vectors must have length {m}")
        if self.W_enc is not None:
            self.W_enc = np.asarray(self.W_enc, dtype=np.float64)
            if self.W_enc.shape != (n, m):
                raise ValueError("encoder matrix must have the decoder's shape")
        for v in (self.mu, self.lam):
            if np.any(v < 0.0) or np.any(v > 1.0):
                raise ValueError("offsets must lie in [0, 1]")

    @property
    def tied(self) -> bool:
        return self.W_enc is None

    @property
    def encoder_weights(self) -> np.ndarray:
        return self.W if self.W_enc is None else self.W_enc

    def copy(self) -> "AeParams":
        return AeParams(self.W.copy(), self.b.copy(), self.c.copy(), self.mu.copy(),
                        self.lam.copy(), None if self.W_enc is None else self.W_enc.copy())


@dataclass
class AeGradient:
    """Loss gradient; ``dW`` includes both paths when the weights are tied."""

    dW: np.ndarray
    db: np.ndarray
    dc: np.ndarray
    dW_enc: np.ndarray | None = None
    dW_dec: np.ndarray | None = None


def encode(p: AeParams, x) -> np.ndarray:
    return expit((np.asarray(x, dtype=np.float64) - p.mu) @ p.encoder_weights + p.c)


def decode(p: AeParams, h) -> np.ndarray:
    return expit((np.asarray(h, dtype=np.float64) - p.lam) @ p.W.T + p.b)


def cross_entropy(x, x_rec) -> float:
    """Batch mean of the summed binary cross entropy; reconstructions are clamped."""
    x = np.atleast_2d(x)
    r = np.clip(np.atleast_2d(x_rec), CE_CLAMP, 1.0 - CE_CLAMP)
    return float(-np.mean(np.sum(x * np.log(r) + (1.0 - x) * np.log(1.0 - r), axis=1)))


def squared_error(x, x_rec) -> float:
    x = np.atleast_2d(x)
    return float(np.mean(np.sum((x - np.atleast_2d(x_rec)) ** 2, axis=1)))


def ae_loss(p: AeParams, x, loss: str = "cross_entropy") -> float:
    r = decode(p, encode(p, x))
    if loss == "cross_entropy":
        return cross_entropy(x, r)
    if loss == "squared_error":
        return squared_error(x, r)
    raise ValueError(f"loss must be one of {LOSSES}")


def ae_gradient(p: AeParams, x, loss: str = "cross_entropy") -> AeGradient:
    """Back-propagated gradient of the batch-mean loss."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[0] == 0:
        raise ValueError("batch must be non-empty")
    B = x.shape[0]
    xc = x - p.mu
    h = expit(xc @ p.encoder_weights + p.c)
    hc = h - p.lam
    r = expit(hc @ p.W.T + p.b)
    if loss == "cross_entropy":
        inside = (r > CE_CLAMP) & (r < 1.0 - CE_CLAMP)
        rc = np.clip(r, CE_CLAMP, 1.0 - CE_CLAMP)
        d_r = np.where(inside, (1.0 - x) / (1.0 - rc) - x / rc, 0.0)
    elif loss == "squared_error":
        d_r = 2.0 * (r - x)
    else:
        raise ValueError(f"loss must be one of {LOSSES}")
    delta_out = d_r * r * (1.0 - r) / B
    dW_dec = delta_out.T @ hc
    delta_hid = (delta_out @ p.W) * h * (1.0 - h)
    dW_enc = xc.T @ delta_hid
    db, dc = delta_out.sum(axis=0), delta_hid.sum(axis=0)
    if p.tied:
        return AeGradient(dW_dec + dW_enc, db, dc, dW_enc=dW_enc, dW_dec=dW_dec)
    return AeGradient(dW_dec, db, dc, dW_enc=dW_enc, dW_dec=dW_dec)


def shift_decoder_offset(p: AeParams, lam_new) -> AeParams:
    """New decoder offset with ``b`` adjusted so decode() is unchanged."""
    lam_new = np.asarray(lam_new, dtype=np.float64)
    q = p.copy()
    q.b = p.b + p.W @ (lam_new - p.lam)
    q.lam = lam_new.copy()
    return q


def shift_encoder_offset(p: AeParams, mu_new) -> AeParams:
    """New encoder offset with ``c`` adjusted so encode() is unchanged."""
    mu_new = np.asarray(mu_new, dtype=np.float64)
    q = p.copy()
    q.c = p.c + p.encoder_weights.T @ (mu_new - p.mu)
    q.mu = mu_new.copy()
    return q


@dataclass
class AeConfig:
    n_hidden: int
    eta: float = 0.1
    batch_size: int = 100
    max_epochs: int = 5000
    lookahead: int = 5
    min_improvement: float = 1e-5
    loss: str = "cross_entropy"
    centered: bool = True
    sliding: float = 0.01
    seed: int = 0
    bias_init: str = "inverse_sigmoid"

    def __post_init__(self):
        if self.eta < 0:
            raise ValueError("eta must be non-negative")
        if self.batch_size < 1 or self.max_epochs < 1 or self.lookahead < 1:
            raise ValueError("batch_size, max_epochs and lookahead must be >= 1")
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}")
        if not 0.0 < self.sliding <= 1.0:
            raise ValueError("sliding factor must lie in (0, 1]")


@dataclass
class AeResult:
    params: AeParams
    best_val: float
    best_epoch: int
    epochs: int
    # (epoch, train loss, validation loss), losses summed over units
    history: list = field(default_factory=list)

    @property
    def best_val_per_unit(self) -> float:
        """Validation loss averaged over input units instead of summed."""
        return self.best_val / self.params.W.shape[0]


def init_ae(mean_x, n_hidden: int, rng, centered: bool = True,
            bias_init: str = "inverse_sigmoid") -> AeParams:
    rng = make_rng(rng)
    mean_x = np.asarray(mean_x, dtype=np.float64)
    n = mean_x.shape[0]
    W = rng.normal(0.0, INIT_STD, size=(n, n_hidden))
    b = logit(mean_x) if bias_init == "inverse_sigmoid" else np.zeros(n)
    mu = mean_x.copy() if centered else np.zeros(n)
    lam = np.full(n_hidden, 0.5) if centered else np.zeros(n_hidden)
    return AeParams(W, b, np.zeros(n_hidden), mu, lam)


def ae_train(train, val, config: AeConfig, params: AeParams | None = None) -> AeResult:
    """Mini-batch gradient descent with early stopping on the validation loss.

    Training stops when the validation loss has not improved on the best value
    by more than ``min_improvement`` for ``lookahead`` consecutive epochs, or
    after ``max_epochs``. The parameters of the best epoch are returned.
    """
    train = np.asarray(train, dtype=np.float64)
    val = np.asarray(val, dtype=np.float64)
    if train.shape[0] == 0 or val.shape[0] == 0:
        raise ValueError("training and validation sets must be non-empty")
    init_ss, batch_ss = np.random.SeedSequence(config.seed).spawn(2)
    if params is None:
        params = init_ae(train.mean(axis=0), config.n_hidden, make_rng(init_ss),
                         config.centered, config.bias_init)
    rng = make_rng(batch_ss)
    p = params.copy()
    best = ae_loss(p, val, config.loss)
    best_p, best_epoch, stall = p.copy(), 0, 0
    history = [(0, ae_loss(p, train, config.loss), best)]
    epoch = 0
    n = train.shape[0]
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            batch = train[order[start:start + config.batch_size]]
            if config.centered:
                lam_new = encode(p, batch).mean(axis=0)
                nu = config.sliding
                p = shift_decoder_offset(p, np.clip((1.0 - nu) * p.lam + nu * lam_new, 0.0, 1.0))
            g = ae_gradient(p, batch, config.loss)
            p.W = p.W - config.eta * g.dW
            if not p.tied:
                p.W_enc = p.W_enc - config.eta * g.dW_enc
            p.b = p.b - config.eta * g.db
            p.c = p.c - config.eta * g.dc
        v = ae_loss(p, val, config.loss)
        history.append((epoch, ae_loss(p, train, config.loss), v))
        if v < best - config.min_improvement:
            best, best_p, best_epoch, stall = v, p.copy(), epoch, 0
        else:
            stall += 1
            if stall >= config.lookahead:
                break
    return AeResult(best_p, best, best_epoch, epoch, history)
