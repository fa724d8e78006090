import json

import numpy as np
import pytest

from centering.dbm import DbmParams
from centering.io import load_model, read_metrics, save_model, write_metrics

from conftest import random_rbm


class TestModelFiles:
    def test_rbm_round_trip_is_bit_exact(self, tmp_path, rng):
        p = random_rbm(rng, 5, 3)
        p.W[0, 0] = 1.0 / 3.0
        save_model(tmp_path / "m.json", p, rng_seed=7, provenance={"policy": "dd_s^l"})
        q, seed, prov = load_model(tmp_path / "m.json")
        for a in ("W", "b", "c", "mu", "lam"):
            np.testing.assert_array_equal(getattr(p, a), getattr(q, a))
        assert seed == 7 and prov == {"policy": "dd_s^l"}

    def test_dbm_round_trip(self, tmp_path, rng):
        p = DbmParams([rng.normal(size=(3, 2)), rng.normal(size=(2, 2))],
                      [rng.normal(size=n) for n in (3, 2, 2)], [rng.random(n) for n in (3, 2, 2)])
        save_model(tmp_path / "d.json", p)
        q, _, _ = load_model(tmp_path / "d.json")
        assert isinstance(q, DbmParams)
        for a, b in zip(p.Ws + p.bs + p.lams, q.Ws + q.bs + q.lams):
            np.testing.assert_array_equal(a, b)

    def test_rejects_non_finite(self, tmp_path, rng):
        p = random_rbm(rng, 2, 2)
        p.W[0, 0] = np.nan
        with pytest.raises(ValueError):
            save_model(tmp_path / "bad.json", p)

    def test_rejects_wrong_format(self, tmp_path):
        (tmp_path / "x.json").write_text(json.dumps({"format": "other"}))
        with pytest.raises(ValueError):
            load_model(tmp_path / "x.json")

    def test_rejects_wrong_size(self, tmp_path, rng):
        save_model(tmp_path / "m.json", random_rbm(rng, 2, 2))
        d = json.loads((tmp_path / "m.json").read_text())
        d["W"] = d["W"][:3]
        (tmp_path / "m.json").write_text(json.dumps(d))
        with pytest.raises(ValueError):
            load_model(tmp_path / "m.json")


class TestMetrics:
    def test_round_trip(self, tmp_path):
        rows = [{"trial": 0, "update": 10, "ll_is_ais": 0, "ll": -1.0 / 3.0, "angle": float("nan")}]
        cols = ["trial", "update", "ll_is_ais", "ll", "angle"]
        write_metrics(tmp_path / "m.csv", rows, cols)
        back = read_metrics(tmp_path / "m.csv")
        assert back[0]["ll"] == -1.0 / 3.0
        assert np.isnan(back[0]["angle"])
        assert back[0]["update"] == 10
