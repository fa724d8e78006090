"""Ground truth by enumeration for small RBMs.

One layer is enumerated and the other is summed out analytically, so the
cost is 2^min(N, M) free-energy evaluations. Everything stays in log space.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import expit, logsumexp

from centering.datasets import Dataset
from centering.gradients import GradientEstimate, standard_gradient
from centering.rbm import (
    BatchStats,
    RbmParams,
    neg_free_energy_h,
    neg_free_energy_x,
    prob_h_given_x,
    to_normal,
)

MAX_ENUM_UNITS = 25


class CapacityError(ValueError):
    """Model too large for exhaustive enumeration."""


class SingularFisherError(np.linalg.LinAlgError):
    pass


@lru_cache(maxsize=32)
def _all_states(n: int) -> np.ndarray:
    idx = np.arange(2 ** n)
    s = ((idx[:, None] >> np.arange(n - 1, -1, -1)) & 1).astype(np.float64)
    s.setflags(write=False)
    return s


def all_states(n: int) -> np.ndarray:
    """All 2^n binary vectors, rows in lexicographic order."""
    if n > MAX_ENUM_UNITS:
        raise CapacityError(f"cannot enumerate {n} units (limit {MAX_ENUM_UNITS})")
    return _all_states(n)


def log_partition(p: RbmParams, via: str = "auto") -> float:
    """ln Z of the (centered) energy.

    ``via="visible"`` enumerates visible states and sums the hidden layer out,
    ``via="hidden"`` the reverse; ``"auto"`` picks the smaller layer.
    """
    if via == "auto":
        via = "visible" if p.n_visible <= p.n_hidden else "hidden"
    if via == "visible":
        return float(logsumexp(neg_free_energy_x(p, all_states(p.n_visible))))
    if via == "hidden":
        return float(logsumexp(neg_free_energy_h(p, all_states(p.n_hidden))))
    raise ValueError(f"unknown enumeration side {via!r}")


def log_prob_x(p: RbmParams, x, log_z: float | None = None) -> np.ndarray:
    if log_z is None:
        log_z = log_partition(p)
    return neg_free_energy_x(p, np.atleast_2d(np.asarray(x, dtype=np.float64))) - log_z


def log_likelihood_exact(p: RbmParams, d: Dataset, log_z: float | None = None) -> float:
    """Weighted LL of the dataset (total or per sample per ``d.ll_convention``)."""
    ll = float(d.weights @ log_prob_x(p, d.patterns, log_z))
    return ll / d.total_weight if d.ll_convention == "mean" else ll


def visible_marginal(p: RbmParams) -> tuple[np.ndarray, np.ndarray]:
    """(states, probabilities) of p(x) over all visible configurations."""
    xs = all_states(p.n_visible)
    lp = neg_free_energy_x(p, xs)
    return xs, np.exp(lp - logsumexp(lp))


def joint_table(p: RbmParams) -> np.ndarray:
    """p(x, h) for all states, shape (2^N, 2^M); tiny models only."""
    if p.n_visible + p.n_hidden > 22:
        raise CapacityError("joint table limited to 22 units")
    from centering.rbm import energy
    xs, hs = all_states(p.n_visible), all_states(p.n_hidden)
    e = energy(p, xs[:, None, :], hs[None, :, :])
    return np.exp(-e - logsumexp(-e))


def exact_model_stats(p: RbmParams):
    """Exact <x>_m, <h>_m and <x h^T>_m, returned as (mean_x, mean_h, corr)."""
    if p.n_visible <= p.n_hidden:
        xs, px = visible_marginal(p)
        q = prob_h_given_x(p, xs)
        return px @ xs, px @ q, (xs * px[:, None]).T @ q
    mh, mx, corr = exact_model_stats(p.transposed())
    return mx, mh, corr.T


def exact_data_stats(p: RbmParams, d: Dataset):
    w = d.weights / d.total_weight
    q = prob_h_given_x(p, d.patterns)
    return w @ d.patterns, w @ q, (d.patterns * w[:, None]).T @ q


def exact_batch_stats(p: RbmParams, d: Dataset) -> BatchStats:
    mxd, mhd, cd = exact_data_stats(p, d)
    mxm, mhm, cm = exact_model_stats(p)
    return BatchStats(mxd, mhd, mxm, mhm, cd, cm)


def exact_gradient(p: RbmParams, d: Dataset) -> GradientEstimate:
    """Exact LL gradient (per sample) in the normal parameterization of ``p``."""
    return standard_gradient(exact_batch_stats(to_normal(p), d))


@dataclass
class FisherMatrix:
    """Fisher information in normal coordinates, index order (W row-major, b, c)."""

    matrix: np.ndarray
    n_visible: int
    n_hidden: int

    def index(self, kind: str, i: int, j: int | None = None) -> int:
        n, m = self.n_visible, self.n_hidden
        if kind == "w":
            return i * m + j
        if kind == "b":
            return n * m + i
        if kind == "c":
            return n * m + n + i
        raise KeyError(kind)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]


def _fisher_visible_enum(p: RbmParams) -> np.ndarray:
    # phi(x, h) = B(x) h + [0; x; 0] with B(x) = [x (x) I_M; 0; I_M]; the hidden
    # layer is summed analytically: Cov = E_x[B diag(q(1-q)) B^T] + Cov_x[E[phi|x]]
    n, m = p.n_visible, p.n_hidden
    xs, px = visible_marginal(p)
    q = expit(xs @ p.W + p.c)
    k = xs.shape[0]
    eye = np.eye(m)
    B = np.zeros((k, n * m + n + m, m))
    B[:, : n * m, :] = (xs[:, :, None, None] * eye[None, None, :, :]).reshape(k, n * m, m)
    B[:, n * m + n:, :] = eye
    mean_phi = np.einsum("kdm,km->kd", B, q)
    mean_phi[:, n * m: n * m + n] = xs
    var_h = q * (1.0 - q)
    within = np.einsum("k,kdm,km,kem->de", px, B, var_h, B)
    mu = px @ mean_phi
    centered = mean_phi - mu
    between = (centered * px[:, None]).T @ centered
    return within + between


def fisher_matrix(p: RbmParams) -> FisherMatrix:
    """Covariance of the sufficient statistics (x h^T, x, h) under the model.

    Offsets are folded into the biases first, so the matrix refers to the
    normal parameterization.
    """
    q = to_normal(p)
    n, m = q.n_visible, q.n_hidden
    if n <= m:
        F = _fisher_visible_enum(q)
    else:
        Ft = _fisher_visible_enum(q.transposed())
        # transposed index order is (W^T row-major, c, b); map back
        perm = np.empty(n * m + n + m, dtype=np.int64)
        ii, jj = np.meshgrid(np.arange(n), np.arange(m), indexing="ij")
        perm[: n * m] = (jj * n + ii).reshape(-1)
        perm[n * m: n * m + n] = n * m + m + np.arange(n)
        perm[n * m + n:] = n * m + np.arange(m)
        F = Ft[np.ix_(perm, perm)]
    F = 0.5 * (F + F.T)
    return FisherMatrix(F, n, m)


def default_damping(F: np.ndarray) -> float:
    return 1e-6 * float(np.trace(F)) / F.shape[0]


def natural_gradient(p: RbmParams, d: Dataset, *, fisher: np.ndarray | FisherMatrix | None = None,
                     damping: float | None = None,
                     gradient: GradientEstimate | None = None) -> GradientEstimate:
    """Solve (I + eps Id) g = grad for the exact LL gradient in normal coordinates.

    ``eps`` defaults to 1e-6 * trace(I) / dim.
    """
    if gradient is None:
        gradient = exact_gradient(p, d)
    if fisher is None:
        fisher = fisher_matrix(p)
    F = fisher.matrix if isinstance(fisher, FisherMatrix) else np.asarray(fisher, dtype=np.float64)
    eps = default_damping(F) if damping is None else damping
    A = F + eps * np.eye(F.shape[0])
    try:
        g = np.linalg.solve(A, gradient.flat())
    except np.linalg.LinAlgError as exc:
        raise SingularFisherError("Fisher matrix singular after damping") from exc
    if not np.all(np.isfinite(g)):
        raise SingularFisherError("natural gradient is not finite")
    return GradientEstimate.from_flat(g, p.n_visible, p.n_hidden, rule="natural")


def gradient_angle(a: GradientEstimate, b: GradientEstimate) -> float:
    """Angle in degrees between two updates as flattened vectors."""
    va, vb = a.flat(), b.flat()
    if va.shape != vb.shape:
        raise ValueError("gradients have different dimensions")
    na, nb = np.linalg.norm(va), np.linalg.norm(vb)
    if na == 0.0 or nb == 0.0:
        raise ValueError("angle undefined for a zero vector")
    cos = float(np.clip(va @ vb / (na * nb), -1.0, 1.0))
    return float(np.degrees(np.arccos(cos)))
