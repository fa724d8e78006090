"""Block Gibbs sampling, CD-k, PCD-k and parallel tempering.

Tempering scales the whole energy (weights and both biases) by the inverse
temperature beta. Parallel tempering uses one Gibbs sweep per replica
followed by swap proposals between neighbouring temperatures on a
deterministic even/odd schedule.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from centering.rbm import RbmParams, energy, prob_h_given_x, prob_x_given_h


def make_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.PCG64(seed))


def spawn_rngs(seed, n: int) -> list[np.random.Generator]:
    """Independent child streams derived from one master seed."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return [np.random.Generator(np.random.PCG64(s)) for s in ss.spawn(n)]


def bernoulli(rng: np.random.Generator, prob) -> np.ndarray:
    return (rng.random(np.shape(prob)) < prob).astype(np.float64)


def uniform_inv_temps(c: int) -> np.ndarray:
    """c inverse temperatures spread uniformly over [0, 1], ending at 1."""
    if c < 1:
        raise ValueError("need at least one temperature")
    if c == 1:
        return np.ones(1)
    return np.arange(c) / (c - 1)


@dataclass
class ChainState:
    """Persistent fantasy particles.

    For ``kind="pt"`` the particle arrays have a leading temperature axis
    aligned with ``inv_temps`` (ascending, last entry 1.0).
    """

    kind: str
    x: np.ndarray
    h: np.ndarray
    rng: np.random.Generator
    inv_temps: np.ndarray = field(default_factory=lambda: np.ones(1))
    rounds: int = 0
    swaps_accepted: int = 0
    swaps_proposed: int = 0

    def __post_init__(self):
        if self.kind not in ("pcd", "pt"):
            raise ValueError(f"unknown chain kind {self.kind!r}")
        t = np.asarray(self.inv_temps, dtype=np.float64)
        if self.kind == "pt":
            if (np.any(np.diff(t) <= 0) or t[-1] != 1.0 or t[0] < 0.0):
                raise ValueError("inverse temperatures must be sorted, distinct, in [0, 1] and end at 1")
            if self.x.ndim != 3 or self.x.shape[0] != t.shape[0]:
                raise ValueError("PT particles need a leading temperature axis")
        self.inv_temps = t

    @property
    def n_particles(self) -> int:
        return self.x.shape[-2]


def pcd_chain(n_visible: int, n_hidden: int, n_particles: int, rng) -> ChainState:
    """PCD chain started from uniformly random particles."""
    rng = make_rng(rng)
    x = bernoulli(rng, np.full((n_particles, n_visible), 0.5))
    h = bernoulli(rng, np.full((n_particles, n_hidden), 0.5))
    return ChainState("pcd", x, h, rng)


def pt_chain(n_visible: int, n_hidden: int, n_particles: int, n_temps: int, rng,
             inv_temps=None) -> ChainState:
    rng = make_rng(rng)
    t = uniform_inv_temps(n_temps) if inv_temps is None else np.asarray(inv_temps, float)
    x = bernoulli(rng, np.full((t.shape[0], n_particles, n_visible), 0.5))
    h = bernoulli(rng, np.full((t.shape[0], n_particles, n_hidden), 0.5))
    return ChainState("pt", x, h, rng, inv_temps=t)


def gibbs_step(p: RbmParams, x, beta, rng: np.random.Generator):
    """One block sweep: h' ~ p_beta(h | x), then x' ~ p_beta(x | h')."""
    h = bernoulli(rng, prob_h_given_x(p, x, beta))
    x = bernoulli(rng, prob_x_given_h(p, h, beta))
    return x, h


def cd_sample(p: RbmParams, data_batch, k: int, rng: np.random.Generator):
    """CD-k fantasy particles: k sweeps started at the data."""
    if k < 1:
        raise ValueError("k must be >= 1")
    x = np.asarray(data_batch, dtype=np.float64)
    for _ in range(k):
        x, h = gibbs_step(p, x, 1.0, rng)
    return x, h


def pcd_step(p: RbmParams, state: ChainState, k: int = 1):
    if state.kind != "pcd":
        raise ValueError("pcd_step needs a pcd chain")
    x = state.x
    for _ in range(k):
        x, h = gibbs_step(p, x, 1.0, state.rng)
    state.x, state.h = x, h
    return x, h


def swap_log_ratio(beta_i, beta_j, e_i, e_j):
    return (beta_i - beta_j) * (e_i - e_j)


def swap_acceptance(beta_i, beta_j, e_i, e_j):
    """Metropolis probability of exchanging states between two temperatures."""
    return np.exp(np.minimum(0.0, swap_log_ratio(beta_i, beta_j, e_i, e_j)))


def pt_step(p: RbmParams, state: ChainState):
    """Gibbs sweep in every replica, then one round of neighbour swaps.

    Even rounds propose pairs (0,1), (2,3), ...; odd rounds (1,2), (3,4), ...
    Returns the particles of the beta = 1 replica.
    """
    if state.kind != "pt":
        raise ValueError("pt_step needs a pt chain")
    betas = state.inv_temps
    x, h = gibbs_step(p, state.x, betas[:, None, None], state.rng)
    c = betas.shape[0]
    lo = np.arange(state.rounds % 2, c - 1, 2)
    if lo.size:
        hi = lo + 1
        e = energy(p, x, h)
        log_r = swap_log_ratio(betas[lo, None], betas[hi, None], e[lo], e[hi])
        u = state.rng.random(log_r.shape)
        acc = np.log(u) < log_r
        state.swaps_proposed += acc.size
        state.swaps_accepted += int(acc.sum())
        if acc.any():
            a3 = acc[:, :, None]
            x_lo, x_hi = x[lo], x[hi]
            h_lo, h_hi = h[lo], h[hi]
            x[lo], x[hi] = np.where(a3, x_hi, x_lo), np.where(a3, x_lo, x_hi)
            h[lo], h[hi] = np.where(a3, h_hi, h_lo), np.where(a3, h_lo, h_hi)
    state.rounds += 1
    state.x, state.h = x, h
    return x[-1], h[-1]


def advance(p: RbmParams, sampler: tuple[str, int], state: ChainState | None, data_batch,
            rng: np.random.Generator):
    """Model-side particles for one update with the given ``(kind, k_or_c)``."""
    kind, k = sampler
    if kind == "cd":
        return cd_sample(p, data_batch, k, rng)
    if kind == "pcd":
        return pcd_step(p, state, k)
    if kind == "pt":
        return pt_step(p, state)
    raise ValueError(f"unknown sampler {kind!r}")
