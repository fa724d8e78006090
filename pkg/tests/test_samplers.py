import numpy as np
import pytest

from centering.exact import visible_marginal
from centering.samplers import (
    ChainState,
    advance,
    cd_sample,
    make_rng,
    pcd_chain,
    pt_chain,
    pt_step,
    spawn_rngs,
    swap_acceptance,
    uniform_inv_temps,
)

from conftest import random_rbm


def state_index(x):
    return (x @ (2 ** np.arange(x.shape[-1] - 1, -1, -1))).astype(int)


class TestHelpers:
    def test_inv_temps(self):
        np.testing.assert_allclose(uniform_inv_temps(5), [0, 0.25, 0.5, 0.75, 1.0])
        np.testing.assert_array_equal(uniform_inv_temps(1), [1.0])
        with pytest.raises(ValueError):
            uniform_inv_temps(0)

    def test_swap_acceptance(self):
        # (0.5 - 1) * (2 - 1) = -0.5
        assert swap_acceptance(0.5, 1.0, 2.0, 1.0) == pytest.approx(np.exp(-0.5))
        assert swap_acceptance(0.5, 1.0, 1.0, 2.0) == 1.0

    def test_rng_streams(self):
        a, b = spawn_rngs(7, 2)
        assert a.random() != b.random()
        g = make_rng(3)
        assert make_rng(g) is g

    def test_chain_validation(self, rng):
        with pytest.raises(ValueError):
            ChainState("pt", np.zeros((2, 3, 2)), np.zeros((2, 3, 2)), rng,
                       inv_temps=np.array([1.0, 0.5]))
        with pytest.raises(ValueError):
            ChainState("gibbs", np.zeros((3, 2)), np.zeros((3, 2)), rng)


class TestStationary:
    """Long runs must reproduce the exact visible marginal of a tiny model."""

    def _check(self, p, xs, px, counts):
        emp = counts / counts.sum()
        assert 0.5 * np.abs(emp - px).sum() < 0.03

    def test_pcd(self, rng):
        p = random_rbm(rng, 3, 2)
        xs, px = visible_marginal(p)
        ch = pcd_chain(3, 2, 50, rng)
        counts = np.zeros(8)
        for t in range(600):
            x, _ = advance(p, ("pcd", 1), ch, None, rng)
            if t >= 100:
                counts += np.bincount(state_index(x), minlength=8)
        self._check(p, xs, px, counts)

    def test_pt(self, rng):
        p = random_rbm(rng, 3, 2, scale=2.0)
        xs, px = visible_marginal(p)
        ch = pt_chain(3, 2, 50, 5, rng)
        counts = np.zeros(8)
        for t in range(600):
            x, _ = pt_step(p, ch)
            if t >= 100:
                counts += np.bincount(state_index(x), minlength=8)
        self._check(p, xs, px, counts)
        assert ch.rounds == 600
        assert 0 < ch.swaps_accepted <= ch.swaps_proposed

    def test_pt_alternates_pairs(self, rng):
        p = random_rbm(rng, 2, 2)
        ch = pt_chain(2, 2, 4, 4, rng)
        pt_step(p, ch)
        assert ch.swaps_proposed == 2 * 4
        pt_step(p, ch)
        assert ch.swaps_proposed == 3 * 4


class TestCd:
    def test_shapes_and_k(self, rng):
        p = random_rbm(rng, 3, 2)
        x, h = cd_sample(p, np.ones((4, 3)), 2, rng)
        assert x.shape == (4, 3) and h.shape == (4, 2)
        with pytest.raises(ValueError):
            cd_sample(p, np.ones((4, 3)), 0, rng)

    def test_unknown_sampler(self, rng):
        with pytest.raises(ValueError):
            advance(random_rbm(rng, 2, 2), ("hmc", 1), None, np.ones((1, 2)), rng)
