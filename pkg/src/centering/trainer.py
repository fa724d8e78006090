"""Training loops for centered and normal RBMs.

Two equivalent update paths are provided. ``train_step_centered`` keeps the
offsets inside the model and reparameterizes the biases whenever they move.
``train_step_centered_gradient`` keeps a normal RBM and applies the centered
update rule with offsets held outside the model. Mapped through
``reparameterize`` both produce the same trajectory.
"""

from __future__ import annotations

import os
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from centering import fast
from centering.ais import AisConfig, estimate_log_partition
from centering.datasets import Dataset
from centering.exact import (
    CapacityError,
    exact_data_stats,
    exact_gradient,
    exact_model_stats,
    gradient_angle,
    log_likelihood_exact,
    log_prob_x,
    natural_gradient,
)
from centering.gradients import (
    GradientEstimate,
    centered_gradient,
    centered_ll_gradient,
    compute_batch_stats,
)
from centering.policy import OffsetPolicy, parse_policy
from centering.rbm import BatchStats, RbmParams, init_params, prob_h_given_x, to_normal
from centering.samplers import ChainState, advance, make_rng, pcd_chain, pt_chain

_SAMPLER_RE = re.compile(r"^(cd|pcd|pt)[-_]?(\d+)$")
UPDATE_RULES = ("centered", "centered_gradient", "natural")


def parse_sampler(s: str) -> tuple[str, int]:
    """``"cd-1"``, ``"pcd-1"``, ``"pt-10"`` (also ``pt10``, ``PT_10``) or ``"exact"``."""
    t = s.strip().lower()
    if t == "exact":
        return ("exact", 0)
    m = _SAMPLER_RE.match(t)
    if m is None:
        raise ValueError(f"cannot parse sampler {s!r}; expected cd-K, pcd-K, pt-C or exact")
    k = int(m.group(2))
    if k < 1:
        raise ValueError("sampler count must be >= 1")
    return (m.group(1), k)


def format_sampler(sampler: tuple[str, int]) -> str:
    kind, k = sampler
    return "exact" if kind == "exact" else f"{kind}-{k}"


@dataclass
class TrainConfig:
    """Hyperparameters of one training run.

    ``sampler="exact"`` replaces the model-side sample average by exact
    enumeration. ``batch_size=None`` means full-batch training. The update
    rule is one of ``centered`` (offsets inside the model), ``centered_gradient``
    (normal model, offsets in the rule) or ``natural`` (exact natural gradient
    of a normal model).
    """

    n_hidden: int = 4
    eta: float = 0.1
    sampler: str = "pt-10"
    batch_size: int | None = None
    n_updates: int = 50_000
    eval_every: int = 50
    seed: int = 0
    use_probabilities: bool = True
    bias_init: str = "inverse_sigmoid"
    update_rule: str = "centered"
    track_angles: bool = False
    # scale the natural gradient to the length of the standard gradient
    natural_rescale: bool = False
    ais_intermediate: int = 1000
    ais_runs: int = 100
    # "auto" uses the compiled loop when the configuration allows it
    backend: str = "auto"

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.n_updates < 0 or self.eval_every < 1:
            raise ValueError("invalid update schedule")
        if self.update_rule not in UPDATE_RULES:
            raise ValueError(f"update_rule must be one of {UPDATE_RULES}")
        parse_sampler(self.sampler)
        if self.backend not in ("auto", "numpy", "compiled"):
            raise ValueError("backend must be auto, numpy or compiled")

    @property
    def sampler_spec(self) -> tuple[str, int]:
        return parse_sampler(self.sampler)


@dataclass
class Offsets:
    """Offsets carried outside a normal RBM by the centered-gradient path."""

    mu: np.ndarray
    lam: np.ndarray

    def copy(self) -> "Offsets":
        return Offsets(self.mu.copy(), self.lam.copy())


def new_chain(sampler: tuple[str, int], n_visible: int, n_hidden: int, n_particles: int,
              rng) -> ChainState | None:
    kind, k = sampler
    if kind == "pcd":
        return pcd_chain(n_visible, n_hidden, n_particles, rng)
    if kind == "pt":
        return pt_chain(n_visible, n_hidden, n_particles, k, rng)
    return None


@dataclass
class StepContext:
    """Everything a single update needs besides the parameters."""

    sampler: tuple[str, int]
    chain: ChainState | None
    rng: np.random.Generator
    use_probabilities: bool = True
    # exact-mode data side: the full weighted dataset
    dataset: Dataset | None = None
    offset_chain: ChainState | None = None


def gather_stats(p: RbmParams, data_batch, ctx: StepContext) -> BatchStats:
    """Draw the model-side particles and collect the batch statistics."""
    kind = ctx.sampler[0]
    if kind == "exact":
        if ctx.dataset is None:
            raise ValueError("exact sampler needs the dataset")
        mxd, mhd, cd = exact_data_stats(p, ctx.dataset)
        mxm, mhm, cm = exact_model_stats(p)
        return BatchStats(mxd, mhd, mxm, mhm, cd, cm)
    x_m, _ = advance(p, ctx.sampler, ctx.chain, data_batch, ctx.rng)
    return compute_batch_stats(p, data_batch, x_m, ctx.use_probabilities, rng=ctx.rng)


def _model_means(p: RbmParams, stats: BatchStats, ctx: StepContext):
    if ctx.offset_chain is None:
        return stats.mean_x_m, stats.mean_h_m
    x_o, _ = advance(p, ctx.sampler, ctx.offset_chain, None, ctx.rng)
    return x_o.mean(axis=0), prob_h_given_x(p, x_o).mean(axis=0)


def _source(kind: str, d, m_fn, size: int, rng):
    if kind == "zero":
        return np.zeros(size)
    if kind == "data_mean":
        return d
    if kind == "model_mean":
        return m_fn()
    if kind == "average_dm":
        return 0.5 * (d + m_fn())
    if kind == "fixed_half":
        return np.full(size, 0.5)
    if kind == "random":
        return rng.random(size)
    raise ValueError(kind)


def estimate_offsets(p: RbmParams, stats: BatchStats, policy: OffsetPolicy, ctx: StepContext):
    """New offset estimates (before smoothing) for the given policy."""
    cache = {}

    def model():
        if "m" not in cache:
            cache["m"] = _model_means(p, stats, ctx)
        return cache["m"]

    mu = _source(policy.visible_source, stats.mean_x_d, lambda: model()[0], p.n_visible, ctx.rng)
    lam = _source(policy.hidden_source, stats.mean_h_d, lambda: model()[1], p.n_hidden, ctx.rng)
    return np.asarray(mu, dtype=np.float64), np.asarray(lam, dtype=np.float64)


def _ema(old, new, nu):
    return np.clip((1.0 - nu) * old + nu * new, 0.0, 1.0)


def _shift_offsets(p: RbmParams, mu_new, lam_new, policy: OffsetPolicy) -> RbmParams:
    nu_mu, nu_lam = policy.sliding_nu_mu, policy.sliding_nu_lambda
    b = p.b + p.W @ (nu_lam * (lam_new - p.lam))
    c = p.c + p.W.T @ (nu_mu * (mu_new - p.mu))
    return RbmParams(p.W, b, c, _ema(p.mu, mu_new, nu_mu), _ema(p.lam, lam_new, nu_lam))


def _apply(p: RbmParams, g: GradientEstimate, eta: float) -> RbmParams:
    return RbmParams(p.W + eta * g.dW, p.b + eta * g.db, p.c + eta * g.dc, p.mu, p.lam)


def train_step_centered(p: RbmParams, data_batch, ctx: StepContext, policy: OffsetPolicy,
                        eta: float) -> tuple[RbmParams, GradientEstimate]:
    """One update of a centered RBM; returns the new parameters and the gradient used."""
    stats = gather_stats(p, data_batch, ctx)
    if policy.reparam_timing == "before_gradient":
        mu_new, lam_new = estimate_offsets(p, stats, policy, ctx)
        p = _shift_offsets(p, mu_new, lam_new, policy)
        g = centered_ll_gradient(p, stats)
        return _apply(p, g, eta), g
    g = centered_ll_gradient(p, stats)
    mu_new, lam_new = estimate_offsets(p, stats, policy, ctx)
    p = _apply(p, g, eta)
    return _shift_offsets(p, mu_new, lam_new, policy), g


def train_step_centered_gradient(p: RbmParams, offsets: Offsets, data_batch, ctx: StepContext,
                                 policy: OffsetPolicy, eta: float
                                 ) -> tuple[RbmParams, GradientEstimate]:
    """One centered-gradient update of a normal RBM; ``offsets`` is updated in place."""
    stats = gather_stats(p, data_batch, ctx)
    before = policy.reparam_timing == "before_gradient"
    mu_new, lam_new = estimate_offsets(p, stats, policy, ctx)
    if before:
        offsets.mu = _ema(offsets.mu, mu_new, policy.sliding_nu_mu)
        offsets.lam = _ema(offsets.lam, lam_new, policy.sliding_nu_lambda)
    g = centered_gradient(p, stats, offsets.mu, offsets.lam)
    if not before:
        offsets.mu = _ema(offsets.mu, mu_new, policy.sliding_nu_mu)
        offsets.lam = _ema(offsets.lam, lam_new, policy.sliding_nu_lambda)
    return _apply(p, g, eta), g


def finalize_to_normal(p: RbmParams) -> RbmParams:
    """Fold the offsets into the biases; the distribution is unchanged."""
    return to_normal(p)


def _norms(q: RbmParams) -> dict:
    return {
        "norm_w_rows_mean": float(np.linalg.norm(q.W, axis=1).mean()),
        "norm_w_cols_mean": float(np.linalg.norm(q.W, axis=0).mean()),
        "norm_b": float(np.linalg.norm(q.b)),
        "norm_c": float(np.linalg.norm(q.c)),
    }


def exact_angles(p: RbmParams, d: Dataset) -> tuple[float, float]:
    """Angles (degrees) of the data-mean centered and the standard gradient to the natural one.

    All three are exact and taken in normal coordinates; the centered
    gradient uses mu = <x>_d and lam = <h>_d.
    """
    q = to_normal(p)
    std = exact_gradient(q, d)
    mxd, mhd, cd = exact_data_stats(q, d)
    mxm, mhm, cm = exact_model_stats(q)
    cen = centered_gradient(q, BatchStats(mxd, mhd, mxm, mhm, cd, cm), mxd, mhd)
    nat = natural_gradient(q, d, gradient=std)
    return gradient_angle(cen, nat), gradient_angle(std, nat)


METRIC_COLUMNS = ("trial", "update", "ll_exact_or_ais", "ll_is_ais", "grad_norm_w",
                  "norm_w_rows_mean", "norm_w_cols_mean", "norm_b", "norm_c", "mu_mean",
                  "lam_mean", "angle_centered_natural", "angle_standard_natural")


class Trainer:
    """Owns the parameters, chains and random streams of one training trial."""

    def __init__(self, dataset: Dataset, config: TrainConfig, policy: OffsetPolicy,
                 seed=None, params: RbmParams | None = None, trial: int = 0):
        self.dataset = dataset
        self.config = config
        self.policy = policy
        self.trial = trial
        ss = seed if isinstance(seed, np.random.SeedSequence) else \
            np.random.SeedSequence(config.seed if seed is None else seed)
        init_ss, chain_ss, step_ss, batch_ss, offset_ss = ss.spawn(5)
        self.rng = make_rng(step_ss)
        self.batch_rng = make_rng(batch_ss)
        self.samples = dataset.samples()
        n_particles = config.batch_size or self.samples.shape[0]
        n, m = dataset.n_visible, config.n_hidden
        self.offsets: Offsets | None = None
        if params is None:
            params = init_params(dataset.mean(), m, make_rng(init_ss), bias_init=config.bias_init,
                                 mu=np.zeros(n) if policy.visible_source == "zero" else None,
                                 lam=np.zeros(m) if policy.hidden_source == "zero" else None)
        if config.update_rule != "centered":
            # normal-model paths start from the same distribution, offsets held outside
            self.offsets = Offsets(params.mu.copy(), params.lam.copy())
            params = to_normal(params)
        self.params = params
        sampler = config.sampler_spec
        self.ctx = StepContext(sampler, new_chain(sampler, n, m, n_particles, make_rng(chain_ss)),
                               self.rng, config.use_probabilities, dataset)
        if policy.decoupled_offset_samples:
            if sampler[0] not in ("pcd", "pt"):
                raise ValueError("decoupled offsets need a persistent sampler")
            self.ctx.offset_chain = new_chain(sampler, n, m, n_particles, make_rng(offset_ss))
        self.update = 0
        self.last_gradient: GradientEstimate | None = None
        self.grad_norm_w = float("nan")
        self._order = np.arange(self.samples.shape[0])
        self._cursor = self.samples.shape[0]

    def _next_batch(self) -> np.ndarray:
        bs = self.config.batch_size
        n = self.samples.shape[0]
        if bs is None or bs >= n:
            return self.samples
        if self._cursor + bs > n:
            self.batch_rng.shuffle(self._order)
            self._cursor = 0
        idx = self._order[self._cursor:self._cursor + bs]
        self._cursor += bs
        return self.samples[idx]

    def step(self) -> GradientEstimate:
        cfg = self.config
        batch = self._next_batch()
        if cfg.update_rule == "centered":
            self.params, g = train_step_centered(self.params, batch, self.ctx, self.policy, cfg.eta)
        elif cfg.update_rule == "centered_gradient":
            self.params, g = train_step_centered_gradient(self.params, self.offsets, batch,
                                                          self.ctx, self.policy, cfg.eta)
        else:
            g = self._natural_step()
        self.update += 1
        self.last_gradient = g
        self.grad_norm_w = float(np.linalg.norm(g.dW))
        return g

    def _natural_step(self) -> GradientEstimate:
        std = exact_gradient(self.params, self.dataset)
        g = natural_gradient(self.params, self.dataset, gradient=std)
        if self.config.natural_rescale:
            g = g.scaled(std.norm() / g.norm())
        self.params = _apply(self.params, g, self.config.eta)
        return g

    @property
    def normal_params(self) -> RbmParams:
        return to_normal(self.params)

    def log_likelihood(self) -> tuple[float, bool]:
        """Exact LL when enumerable, AIS estimate otherwise; second value flags AIS."""
        try:
            return log_likelihood_exact(self.params, self.dataset), False
        except CapacityError:
            cfg = AisConfig(self.config.ais_intermediate, self.config.ais_runs)
            res = estimate_log_partition(self.params, cfg, self.rng)
            lp = log_prob_x(self.params, self.dataset.patterns, res.log_z)
            ll = float(self.dataset.weights @ lp)
            if self.dataset.ll_convention == "mean":
                ll /= self.dataset.total_weight
            return ll, True

    def metrics(self) -> dict:
        ll, is_ais = self.log_likelihood()
        q = self.normal_params
        off = self.offsets or Offsets(self.params.mu, self.params.lam)
        row = {"trial": self.trial, "update": self.update, "ll_exact_or_ais": ll,
               "ll_is_ais": int(is_ais),
               "grad_norm_w": self.grad_norm_w,
               **_norms(q), "mu_mean": float(np.mean(off.mu)), "lam_mean": float(np.mean(off.lam)),
               "angle_centered_natural": float("nan"), "angle_standard_natural": float("nan")}
        if self.config.track_angles:
            row["angle_centered_natural"], row["angle_standard_natural"] = \
                exact_angles(self.params, self.dataset)
        return row

    def compiled_eligible(self) -> bool:
        cfg, pol = self.config, self.policy
        return (fast.available() and cfg.update_rule == "centered"
                and self.ctx.sampler[0] in fast.KIND_CODES and cfg.use_probabilities
                and (cfg.batch_size is None or cfg.batch_size >= self.samples.shape[0])
                and pol.visible_source in fast.SOURCE_CODES
                and pol.hidden_source in fast.SOURCE_CODES
                and not pol.decoupled_offset_samples)

    def run(self) -> list[dict]:
        cfg = self.config
        use_compiled = cfg.backend == "compiled" or (cfg.backend == "auto" and self.compiled_eligible())
        if use_compiled and not self.compiled_eligible():
            raise ValueError("configuration not supported by the compiled backend")
        rows = [self.metrics()]
        while self.update < cfg.n_updates:
            if use_compiled:
                n_steps = min(cfg.eval_every - self.update % cfg.eval_every,
                              cfg.n_updates - self.update)
                self.run_compiled(n_steps)
            else:
                self.step()
            if self.update % cfg.eval_every == 0 or self.update == cfg.n_updates:
                rows.append(self.metrics())
        return rows

    def run_compiled(self, n_steps: int) -> None:
        """Advance ``n_steps`` updates with the compiled loop."""
        p, chain = self.params, self.ctx.chain
        kind, k = self.ctx.sampler
        n, m = p.n_visible, p.n_hidden
        W, b, c = p.W.copy(), p.b.copy(), p.c.copy()
        mu, lam = p.mu.copy(), p.lam.copy()
        data = np.ascontiguousarray(self.samples)
        if kind == "cd":
            rng, xs, hs, betas, rounds, n_part = self.rng, np.zeros((1, 1, n)), \
                np.zeros((1, 1, m)), np.ones(1), 0, data.shape[0]
        elif kind == "pcd":
            rng, xs, hs, betas, rounds = chain.rng, chain.x[None].copy(), chain.h[None].copy(), \
                np.ones(1), 0
            n_part = chain.n_particles
        else:
            rng, xs, hs, betas, rounds = chain.rng, chain.x.copy(), chain.h.copy(), \
                chain.inv_temps, chain.rounds
            n_part = chain.n_particles
        count = sum(fast.uniforms_per_step(kind, k, n, m, n_part, betas.shape[0], rounds + s)
                    for s in range(n_steps))
        u = rng.random(count)
        counters = np.zeros(2, dtype=np.int64)
        gn = np.zeros(1)
        pol = self.policy
        rounds, pos = fast.kernel()(
            W, b, c, mu, lam, data, xs, hs, betas, rounds, u, n_steps, fast.KIND_CODES[kind], k,
            fast.SOURCE_CODES[pol.visible_source], fast.SOURCE_CODES[pol.hidden_source],
            pol.sliding_nu_mu, pol.sliding_nu_lambda, pol.reparam_timing == "before_gradient",
            self.config.eta, counters, gn)
        if pos != count:
            raise RuntimeError("compiled loop consumed an unexpected number of random draws")
        self.params = RbmParams(W, b, c, mu, lam)
        if kind == "pcd":
            chain.x, chain.h = xs[0], hs[0]
        elif kind == "pt":
            chain.x, chain.h, chain.rounds = xs, hs, rounds
            chain.swaps_accepted += int(counters[0])
            chain.swaps_proposed += int(counters[1])
        self.update += n_steps
        self.last_gradient = None
        self.grad_norm_w = float(gn[0])


@dataclass
class Summary:
    max_mean: float
    std_at_max: float
    final_mean: float
    update_at_max: int

    def format(self) -> str:
        return f"{self.max_mean:.2f} ±{self.std_at_max:.2f} ({self.final_mean:.1f})"


@dataclass
class ExperimentResult:
    """Metrics of all trials; ``ll`` has shape (trials, evaluation points)."""

    updates: np.ndarray
    ll: np.ndarray
    rows: list[dict] = field(default_factory=list)
    name: str = ""
    # final parameters of every trial, offsets included
    final_params: list = field(default_factory=list)

    @property
    def mean_ll(self) -> np.ndarray:
        return self.ll.mean(axis=0)

    def per_trial_max(self) -> np.ndarray:
        return self.ll.max(axis=1)

    def summary(self) -> Summary:
        """Maximum over evaluation points of the trial-averaged LL, the
        standard deviation across trials at that point and the final average."""
        mean = self.mean_ll
        i = int(np.argmax(mean))
        std = float(self.ll[:, i].std(ddof=1)) if self.ll.shape[0] > 1 else 0.0
        return Summary(float(mean[i]), std, float(mean[-1]), int(self.updates[i]))

    def column(self, name: str) -> np.ndarray:
        """Metric ``name`` arranged as (trials, evaluation points)."""
        n_trials = self.ll.shape[0]
        vals = np.array([r[name] for r in self.rows], dtype=np.float64)
        return vals.reshape(n_trials, -1)


def _run_trial(args):
    dataset, config, policy, seed, trial = args
    tr = Trainer(dataset, config, policy, seed=seed, trial=trial)
    return tr.run(), tr.params


def default_workers() -> int:
    return max(1, int(os.environ.get("CENTERING_WORKERS", "1")))


def run_experiment(dataset: Dataset, config: TrainConfig, policy: OffsetPolicy | str,
                   trials: int, workers: int | None = None, name: str = "") -> ExperimentResult:
    """Run ``trials`` independent seeded repetitions and collect their metrics.

    Trial ``t`` uses child ``t`` of the master seed, so results do not depend
    on the number of workers.
    """
    if trials < 1:
        raise ValueError("need at least one trial")
    if isinstance(policy, str):
        policy = parse_policy(policy)
    seeds = np.random.SeedSequence(config.seed).spawn(trials)
    jobs = [(dataset, config, policy, seeds[t], t) for t in range(trials)]
    workers = default_workers() if workers is None else workers
    if workers > 1 and trials > 1:
        with ProcessPoolExecutor(max_workers=min(workers, trials)) as ex:
            results = list(ex.map(_run_trial, jobs))
    else:
        results = [_run_trial(j) for j in jobs]
    per_trial = [r for r, _ in results]
    rows = [r for t in per_trial for r in t]
    updates = np.array([r["update"] for r in per_trial[0]])
    ll = np.array([[r["ll_exact_or_ais"] for r in t] for t in per_trial])
    return ExperimentResult(updates, ll, rows, name, [p for _, p in results])


def config_dict(config: TrainConfig) -> dict:
    return asdict(config)


def with_overrides(config: TrainConfig, **kw) -> TrainConfig:
    return replace(config, **kw)
