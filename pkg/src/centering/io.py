"""Model files (JSON) and metrics CSV files.

Model file fields for an RBM::

    {"format": "centering-rbm", "version": 1, "n_visible": N, "n_hidden": M,
     "W": [N*M values, row-major], "b": [...], "c": [...], "mu": [...],
     "lam": [...], "rng_seed": seed or null, "provenance": {...}}

DBM files use ``"format": "centering-dbm"`` with ``layers``, ``Ws`` (each
row-major), ``bs`` and ``lams``. Floats are written with their shortest
round-trip representation, so reading a file back is bit-exact.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from centering.dbm import DbmParams
from centering.rbm import RbmParams

RBM_FORMAT = "centering-rbm"
DBM_FORMAT = "centering-dbm"
VERSION = 1


def _floats(a) -> list[float]:
    vals = [float(v) for v in np.asarray(a, dtype=np.float64).reshape(-1)]
    if not all(math.isfinite(v) for v in vals):
        raise ValueError("model contains non-finite values")
    return vals


def rbm_to_dict(p: RbmParams, rng_seed=None, provenance: dict | None = None) -> dict:
    return {"format": RBM_FORMAT, "version": VERSION,
            "n_visible": p.n_visible, "n_hidden": p.n_hidden,
            "W": _floats(p.W), "b": _floats(p.b), "c": _floats(p.c),
            "mu": _floats(p.mu), "lam": _floats(p.lam),
            "rng_seed": rng_seed, "provenance": provenance or {}}


def rbm_from_dict(d: dict) -> RbmParams:
    if d.get("format") != RBM_FORMAT:
        raise ValueError(f"not an RBM model file (format {d.get('format')!r})")
    n, m = int(d["n_visible"]), int(d["n_hidden"])
    W = np.array(d["W"], dtype=np.float64)
    if W.shape != (n * m,):
        raise ValueError("W has the wrong number of entries")
    return RbmParams(W.reshape(n, m), d["b"], d["c"], d["mu"], d["lam"])


def dbm_to_dict(p: DbmParams, rng_seed=None, provenance: dict | None = None) -> dict:
    return {"format": DBM_FORMAT, "version": VERSION, "layers": p.layers,
            "Ws": [_floats(w) for w in p.Ws], "bs": [_floats(b) for b in p.bs],
            "lams": [_floats(v) for v in p.lams],
            "rng_seed": rng_seed, "provenance": provenance or {}}


def dbm_from_dict(d: dict) -> DbmParams:
    if d.get("format") != DBM_FORMAT:
        raise ValueError(f"not a DBM model file (format {d.get('format')!r})")
    layers = [int(n) for n in d["layers"]]
    Ws = [np.array(w, dtype=np.float64).reshape(a, b)
          for w, a, b in zip(d["Ws"], layers[:-1], layers[1:])]
    return DbmParams(Ws, d["bs"], d["lams"])


def save_model(path, p, rng_seed=None, provenance: dict | None = None) -> None:
    d = dbm_to_dict(p, rng_seed, provenance) if isinstance(p, DbmParams) \
        else rbm_to_dict(p, rng_seed, provenance)
    Path(path).write_text(json.dumps(d, indent=1) + "\n")


def load_model(path):
    """Read an RBM or DBM model file; returns (params, rng_seed, provenance)."""
    d = json.loads(Path(path).read_text())
    p = dbm_from_dict(d) if d.get("format") == DBM_FORMAT else rbm_from_dict(d)
    return p, d.get("rng_seed"), d.get("provenance", {})


def write_metrics(path, rows, columns) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow(["" if isinstance(r[c], float) and math.isnan(r[c]) else repr(r[c])
                        if isinstance(r[c], float) else r[c] for c in columns])


def read_metrics(path) -> list[dict]:
    out = []
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            row = {}
            for k, v in r.items():
                if k in ("trial", "update", "ll_is_ais"):
                    row[k] = int(v)
                else:
                    row[k] = float(v) if v != "" else float("nan")
            out.append(row)
    return out
