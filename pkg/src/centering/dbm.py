"""Centered deep Boltzmann machines.

Layer 0 is visible. A DBM is an RBM with block-sparse weights once the even
layers are put on one side and the odd layers on the other, so model-side
sampling and exact evaluation reuse the RBM machinery on the flattened
model. The data side uses a damped mean-field posterior.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logsumexp

from centering.datasets import Dataset
from centering.exact import CapacityError, all_states, log_partition
from centering.gradients import _moments, centered_ll_gradient
from centering.policy import LayerPolicy
from centering.rbm import (
    INIT_STD,
    BatchStats,
    RbmParams,
    init_params,
    logit,
    neg_free_energy_x,
    prob_h_given_x,
    reparameterize,
)
from centering.samplers import ChainState, advance, make_rng
from centering.trainer import StepContext, _ema, new_chain, parse_sampler, train_step_centered

MF_TOL = 1e-4
MF_MAX_ITERS = 50
MF_DAMPING = 0.5


@dataclass
class DbmParams:
    """Weights ``Ws[l]`` connect layer l (rows) to layer l + 1 (columns)."""

    Ws: list
    bs: list
    lams: list

    def __post_init__(self):
        self.Ws = [np.asarray(w, dtype=np.float64) for w in self.Ws]
        self.bs = [np.asarray(b, dtype=np.float64) for b in self.bs]
        self.lams = [np.asarray(v, dtype=np.float64) for v in self.lams]
        if len(self.Ws) < 1 or len(self.bs) != len(self.Ws) + 1 or len(self.lams) != len(self.bs):
            raise ValueError("need L weight matrices and L + 1 biases and offsets")
        for l, w in enumerate(self.Ws):
            if w.shape != (self.bs[l].shape[0], self.bs[l + 1].shape[0]):
                raise ValueError(f"weight matrix {l} does not match the layer sizes")
        for b, v in zip(self.bs, self.lams):
            if v.shape != b.shape:
                raise ValueError("offset and bias lengths differ")
            if np.any(v < 0.0) or np.any(v > 1.0):
                raise ValueError("offsets must lie in [0, 1]")

    @property
    def layers(self) -> list[int]:
        return [b.shape[0] for b in self.bs]

    @property
    def depth(self) -> int:
        return len(self.Ws)

    def copy(self) -> "DbmParams":
        return DbmParams([w.copy() for w in self.Ws], [b.copy() for b in self.bs],
                         [v.copy() for v in self.lams])

    @classmethod
    def zeros(cls, layers) -> "DbmParams":
        return cls([np.zeros((a, b)) for a, b in zip(layers[:-1], layers[1:])],
                   [np.zeros(n) for n in layers], [np.zeros(n) for n in layers])

    @classmethod
    def from_rbm(cls, p: RbmParams) -> "DbmParams":
        return cls([p.W.copy()], [p.b.copy(), p.c.copy()], [p.mu.copy(), p.lam.copy()])


def dbm_energy(p: DbmParams, states) -> np.ndarray:
    """Energy of joint states given as one (batch of) vector(s) per layer."""
    if len(states) != len(p.bs):
        raise ValueError("one state per layer required")
    cen = [np.asarray(s, dtype=np.float64) - v for s, v in zip(states, p.lams)]
    e = -sum(s @ b for s, b in zip(cen, p.bs))
    for l, w in enumerate(p.Ws):
        e = e - np.sum((cen[l] @ w) * cen[l + 1], axis=-1)
    return e


def _sides(layers):
    even = [l for l in range(len(layers)) if l % 2 == 0]
    odd = [l for l in range(len(layers)) if l % 2 == 1]
    return even, odd


def _slices(layers, group):
    out, pos = {}, 0
    for l in group:
        out[l] = slice(pos, pos + layers[l])
        pos += layers[l]
    return out, pos


def flatten_to_rbm(p: DbmParams) -> RbmParams:
    """Equivalent RBM: even layers form the visible side, odd layers the hidden side."""
    layers = p.layers
    even, odd = _sides(layers)
    if p.depth == 1:
        return RbmParams(p.Ws[0].copy(), p.bs[0].copy(), p.bs[1].copy(),
                         p.lams[0].copy(), p.lams[1].copy())
    ev, n = _slices(layers, even)
    od, m = _slices(layers, odd)
    W = np.zeros((n, m))
    for l, w in enumerate(p.Ws):
        if l % 2 == 0:
            W[ev[l], od[l + 1]] = w
        else:
            W[ev[l + 1], od[l]] = w.T
    return RbmParams(W, np.concatenate([p.bs[l] for l in even]),
                     np.concatenate([p.bs[l] for l in odd]),
                     np.concatenate([p.lams[l] for l in even]),
                     np.concatenate([p.lams[l] for l in odd]))


def split_states(p: DbmParams, even_states, odd_states) -> list[np.ndarray]:
    """Per-layer states from flattened (even side, odd side) arrays."""
    layers = p.layers
    even, odd = _sides(layers)
    ev, _ = _slices(layers, even)
    od, _ = _slices(layers, odd)
    out = []
    for l in range(len(layers)):
        out.append(even_states[..., ev[l]] if l % 2 == 0 else odd_states[..., od[l]])
    return out


def dbm_log_partition(p: DbmParams) -> float:
    return log_partition(flatten_to_rbm(p))


def dbm_log_prob_x(p: DbmParams, x, log_z: float | None = None) -> np.ndarray:
    """Exact log p(x) for tiny DBMs: upper even layers enumerated, odd layers summed out."""
    q = flatten_to_rbm(p)
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    n0 = p.layers[0]
    rest = q.n_visible - n0
    if rest > 20:
        raise CapacityError("too many hidden even-layer units to enumerate")
    if log_z is None:
        log_z = log_partition(q)
    upper = all_states(rest)
    full = np.concatenate([np.repeat(x, upper.shape[0], axis=0),
                           np.tile(upper, (x.shape[0], 1))], axis=1)
    lf = neg_free_energy_x(q, full).reshape(x.shape[0], upper.shape[0])
    return logsumexp(lf, axis=1) - log_z


def dbm_log_likelihood_exact(p: DbmParams, d: Dataset) -> float:
    ll = float(d.weights @ dbm_log_prob_x(p, d.patterns))
    return ll / d.total_weight if d.ll_convention == "mean" else ll


@dataclass
class MeanFieldResult:
    means: list
    converged: bool
    iterations: int


def _layer_input(p: DbmParams, q, l):
    a = None
    if l > 0:
        a = (q[l - 1] - p.lams[l - 1]) @ p.Ws[l - 1] + p.bs[l]
    if l < p.depth:
        top = (q[l + 1] - p.lams[l + 1]) @ p.Ws[l].T
        a = top + p.bs[l] if a is None else a + top
    return a


def mean_field_posterior(p: DbmParams, x, tol: float = MF_TOL, max_iters: int = MF_MAX_ITERS,
                         damping: float = MF_DAMPING) -> MeanFieldResult:
    """Factorized posterior means of the hidden layers given visible ``x``.

    Initialized bottom-up with each layer ignoring the layers above, then
    damped layer-by-layer fixed-point updates until the largest change falls
    below ``tol``. For a single hidden layer the initial pass is already exact.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    q = [x]
    for l in range(1, p.depth + 1):
        q.append(expit(1.0 * ((q[l - 1] - p.lams[l - 1]) @ p.Ws[l - 1] + p.bs[l])))
    converged, it = False, 0
    while it < max_iters:
        it += 1
        delta = 0.0
        for l in range(1, p.depth + 1):
            new = damping * q[l] + (1.0 - damping) * expit(_layer_input(p, q, l))
            delta = max(delta, float(np.max(np.abs(new - q[l]))))
            q[l] = new
        if delta < tol:
            converged = True
            break
    return MeanFieldResult(q, converged, it)


def _bernoulli_entropy(q):
    q = np.clip(q, 1e-300, 1.0)
    r = np.clip(1.0 - q, 1e-300, 1.0)
    return -np.sum(q * np.log(q) + r * np.log(r), axis=-1)


def variational_bound(p: DbmParams, x, mf: MeanFieldResult | None = None,
                      log_z: float | None = None) -> np.ndarray:
    """Mean-field lower bound on log p(x) for each row of ``x``."""
    if mf is None:
        mf = mean_field_posterior(p, x)
    if log_z is None:
        log_z = dbm_log_partition(p)
    ent = sum(_bernoulli_entropy(q) for q in mf.means[1:])
    return -dbm_energy(p, mf.means) + ent - log_z


def dbm_variational_ll(p: DbmParams, d: Dataset, log_z: float | None = None) -> float:
    ll = float(d.weights @ variational_bound(p, d.patterns, log_z=log_z))
    return ll / d.total_weight if d.ll_convention == "mean" else ll


def _source(kind, d, m, size):
    if kind == "zero":
        return np.zeros(size)
    if kind == "data_mean":
        return d
    if kind == "model_mean":
        return m
    if kind == "average_dm":
        return 0.5 * (d + m)
    return np.full(size, 0.5)


@dataclass
class DbmStats:
    mean_d: list
    mean_m: list
    corr_d: list
    corr_m: list

    def pair(self, l: int) -> BatchStats:
        return BatchStats(self.mean_d[l], self.mean_d[l + 1], self.mean_m[l], self.mean_m[l + 1],
                          self.corr_d[l], self.corr_m[l])


def dbm_stats(p: DbmParams, data_batch, ctx: StepContext,
              mf_kwargs: dict | None = None) -> DbmStats:
    """Mean-field data statistics and flattened-chain model statistics.

    Model-side even layers are sampled states; odd layers are conditional
    probabilities given them.
    """
    x_d = np.atleast_2d(np.asarray(data_batch, dtype=np.float64))
    flat = flatten_to_rbm(p)
    x_m, _ = advance(flat, ctx.sampler, ctx.chain, x_d, ctx.rng)
    h_m = prob_h_given_x(flat, x_m)
    mf = mean_field_posterior(p, x_d, **(mf_kwargs or {}))
    model = split_states(p, x_m, h_m)
    mean_d, mean_m, corr_d, corr_m = [], [], [], []
    for l in range(p.depth):
        md0, md1, cd = _moments(mf.means[l], mf.means[l + 1])
        mm0, mm1, cm = _moments(model[l], model[l + 1])
        if l == 0:
            mean_d.append(md0)
            mean_m.append(mm0)
        mean_d.append(md1)
        mean_m.append(mm1)
        corr_d.append(cd)
        corr_m.append(cm)
    return DbmStats(mean_d, mean_m, corr_d, corr_m)


def _shift(p: DbmParams, new, nu) -> DbmParams:
    L = p.depth
    bs = []
    for l in range(L + 1):
        b = p.bs[l]
        if l > 0:
            b = b + p.Ws[l - 1].T @ (nu * (new[l - 1] - p.lams[l - 1]))
        if l < L:
            b = b + p.Ws[l] @ (nu * (new[l + 1] - p.lams[l + 1]))
        bs.append(b)
    return DbmParams(p.Ws, bs, [_ema(v, n, nu) for v, n in zip(p.lams, new)])


def dbm_train_step(p: DbmParams, data_batch, ctx: StepContext, policy: LayerPolicy, eta: float,
                   mf_kwargs: dict | None = None) -> DbmParams:
    """One centered update of every layer pair.

    With one hidden layer the operations and random draws are those of the
    RBM trainer, so both produce identical trajectories.
    """
    if len(policy.sources) != p.depth + 1:
        raise ValueError("policy must name one offset source per layer")
    s = dbm_stats(p, data_batch, ctx, mf_kwargs)
    nu = policy.sliding_nu

    def new_offsets():
        return [_source(k, d, m, d.shape[0])
                for k, d, m in zip(policy.sources, s.mean_d, s.mean_m)]

    before = policy.reparam_timing == "before_gradient"
    if before:
        p = _shift(p, new_offsets(), nu)
    Ws, bs = list(p.Ws), list(p.bs)
    db = [None] * (p.depth + 1)
    for l in range(p.depth):
        pair = RbmParams(p.Ws[l], p.bs[l], p.bs[l + 1], p.lams[l], p.lams[l + 1])
        g = centered_ll_gradient(pair, s.pair(l))
        Ws[l] = p.Ws[l] + eta * g.dW
        if l == 0:
            db[0] = g.db
        db[l + 1] = g.dc
    bs = [b + eta * g for b, g in zip(bs, db)]
    q = DbmParams(Ws, bs, p.lams)
    if not before:
        q = _shift(q, new_offsets(), nu)
    return q


def init_dbm(layers, data_mean, rng, policy: LayerPolicy, bias_init: str = "inverse_sigmoid"
             ) -> DbmParams:
    """Gaussian weights (std 0.01), visible bias from the data mean, zero hidden biases.

    Offsets are the data mean on the visible layer and 0.5 on hidden
    layers, or zero where the policy says so.
    """
    rng = make_rng(rng)
    Ws = [rng.normal(0.0, INIT_STD, size=(a, b)) for a, b in zip(layers[:-1], layers[1:])]
    mean = np.asarray(data_mean, dtype=np.float64)
    bs = [logit(mean) if bias_init == "inverse_sigmoid" else np.zeros(layers[0])]
    bs += [np.zeros(n) for n in layers[1:]]
    lams = [np.zeros(n) if src == "zero" else (mean.copy() if l == 0 else np.full(n, 0.5))
            for l, (n, src) in enumerate(zip(layers, policy.sources))]
    return DbmParams(Ws, bs, lams)


@dataclass
class DbmConfig:
    layers: tuple
    eta: float = 0.05
    sampler: str = "pcd-1"
    n_updates: int = 5000
    eval_every: int = 100
    seed: int = 0
    bias_init: str = "inverse_sigmoid"
    pretrain_updates: int = 0
    mf_tol: float = MF_TOL
    mf_max_iters: int = MF_MAX_ITERS
    mf_damping: float = MF_DAMPING

    def __post_init__(self):
        self.layers = tuple(int(n) for n in self.layers)
        if len(self.layers) < 2:
            raise ValueError("a DBM needs at least two layers")
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        kind, _ = parse_sampler(self.sampler)
        if kind == "exact" or (kind == "cd" and len(self.layers) > 2):
            raise ValueError("DBM training needs a persistent sampler (pcd or pt)")

    @property
    def mf_kwargs(self) -> dict:
        return {"tol": self.mf_tol, "max_iters": self.mf_max_iters, "damping": self.mf_damping}


def _train_rbm_layer(data, n_hidden, policy, eta, n_updates, sampler, ss, bias_init):
    # the seed layout of the RBM trainer, so a single layer reproduces it exactly
    init_ss, chain_ss, step_ss, _batch_ss, _offset_ss = ss.spawn(5)
    d = np.asarray(data, dtype=np.float64)
    mean = d.mean(axis=0)
    p = init_params(mean, n_hidden, make_rng(init_ss), bias_init=bias_init,
                    mu=np.zeros(d.shape[1]) if policy.visible_source == "zero" else None,
                    lam=np.zeros(n_hidden) if policy.hidden_source == "zero" else None)
    ctx = StepContext(sampler, new_chain(sampler, d.shape[1], n_hidden, d.shape[0],
                                         make_rng(chain_ss)), make_rng(step_ss))
    for _ in range(n_updates):
        p, _g = train_step_centered(p, d, ctx, policy, eta)
    return p


def greedy_pretrain(layers, data, policy: LayerPolicy, eta: float, n_updates: int,
                    sampler: str = "pcd-1", seed=0, bias_init: str = "inverse_sigmoid"
                    ) -> DbmParams:
    """Layer-wise RBM pre-training, plain stacking of the results.

    Hidden probabilities of each trained RBM are the input of the next one.
    Offsets of each hidden layer are the mean of those probabilities (zero
    for zero-offset layers); every RBM is reparameterized to the shared
    offsets, and an inner layer's bias averages the two RBM biases it gets.
    """
    layers = list(layers)
    if len(layers) < 2:
        raise ValueError("need at least two layers")
    sampler_kind = parse_sampler(sampler)
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    children = ss.spawn(len(layers) - 1)
    x = np.asarray(data, dtype=np.float64)
    rbms, offsets = [], [None] * len(layers)
    offsets[0] = np.zeros(layers[0]) if policy.sources[0] == "zero" else x.mean(axis=0)
    for l in range(len(layers) - 1):
        r = _train_rbm_layer(x, layers[l + 1], policy.pair(l), eta, n_updates, sampler_kind,
                             children[l], bias_init)
        x = prob_h_given_x(r, x)
        offsets[l + 1] = np.zeros(layers[l + 1]) if policy.sources[l + 1] == "zero" \
            else np.clip(x.mean(axis=0), 0.0, 1.0)
        rbms.append(r)
    rbms = [reparameterize(r, offsets[l], offsets[l + 1]) for l, r in enumerate(rbms)]
    bs = [rbms[0].b]
    for l in range(1, len(layers) - 1):
        bs.append(0.5 * (rbms[l - 1].c + rbms[l].b))
    bs.append(rbms[-1].c)
    return DbmParams([r.W for r in rbms], bs, offsets)


class DbmTrainer:
    """Training loop for one DBM trial (full batch)."""

    def __init__(self, dataset: Dataset, config: DbmConfig, policy: LayerPolicy, seed=None,
                 params: DbmParams | None = None):
        if config.layers[0] != dataset.n_visible:
            raise ValueError("first layer size must equal the number of visible units")
        self.dataset, self.config, self.policy = dataset, config, policy
        ss = seed if isinstance(seed, np.random.SeedSequence) else \
            np.random.SeedSequence(config.seed if seed is None else seed)
        init_ss, chain_ss, step_ss, _batch_ss, pre_ss = ss.spawn(5)
        self.samples = dataset.samples()
        if params is None:
            if config.pretrain_updates > 0:
                params = greedy_pretrain(config.layers, self.samples, policy, config.eta,
                                         config.pretrain_updates, config.sampler, pre_ss,
                                         config.bias_init)
            else:
                params = init_dbm(config.layers, dataset.mean(), make_rng(init_ss), policy,
                                  config.bias_init)
        self.params = params
        even, odd = _sides(config.layers)
        n_even = sum(config.layers[l] for l in even)
        n_odd = sum(config.layers[l] for l in odd)
        sampler_kind = parse_sampler(config.sampler)
        self.ctx = StepContext(sampler_kind, new_chain(sampler_kind, n_even, n_odd, self.samples.shape[0],
                                               make_rng(chain_ss)), make_rng(step_ss))
        self.update = 0

    @property
    def chain(self) -> ChainState | None:
        return self.ctx.chain

    def step(self) -> DbmParams:
        self.params = dbm_train_step(self.params, self.samples, self.ctx, self.policy,
                                     self.config.eta, self.config.mf_kwargs)
        self.update += 1
        return self.params

    def evaluate(self) -> dict:
        log_z = dbm_log_partition(self.params)
        return {"update": self.update,
                "ll_exact": dbm_log_likelihood_exact(self.params, self.dataset),
                "ll_bound": dbm_variational_ll(self.params, self.dataset, log_z)}

    def run(self) -> list[dict]:
        rows = [self.evaluate()]
        while self.update < self.config.n_updates:
            self.step()
            if self.update % self.config.eval_every == 0 or self.update == self.config.n_updates:
                rows.append(self.evaluate())
        return rows
