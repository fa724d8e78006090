"""Offset policies and their short names.

A policy name is two source letters (visible, hidden), an optional ``_s``
for a moving average and an optional ``^b`` / ``^l`` for the timing of the
reparameterization: ``00``, ``dd_s^l``, ``aa^b``, ``dm_s^b``.

Source letters: ``0`` zero, ``d`` data mean, ``m`` model mean, ``a``
average of data and model mean, ``h`` fixed 0.5, ``r`` uniform random.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

SOURCES = {
    "0": "zero",
    "d": "data_mean",
    "m": "model_mean",
    "a": "average_dm",
    "h": "fixed_half",
    "r": "random",
}
_LETTER = {v: k for k, v in SOURCES.items()}
TIMINGS = {"b": "before_gradient", "l": "after_gradient"}
_TIMING_LETTER = {v: k for k, v in TIMINGS.items()}

DEFAULT_SLIDING = 0.01

_PATTERN = re.compile(r"^([0dmahr])([0dmahr])(_s)?(?:\^([bl]))?$")

GRAMMAR = ("<visible><hidden>[_s][^b|^l] with sources "
           + ", ".join(f"{k}={v}" for k, v in SOURCES.items()))


class PolicyParseError(ValueError):
    pass


@dataclass(frozen=True)
class OffsetPolicy:
    visible_source: str = "zero"
    hidden_source: str = "zero"
    sliding_nu_mu: float = 1.0
    sliding_nu_lambda: float = 1.0
    reparam_timing: str = "before_gradient"
    # offsets estimated from an extra, independent model chain
    decoupled_offset_samples: bool = False

    def __post_init__(self):
        for s in (self.visible_source, self.hidden_source):
            if s not in _LETTER:
                raise ValueError(f"unknown offset source {s!r}")
        for nu in (self.sliding_nu_mu, self.sliding_nu_lambda):
            if not 0.0 < nu <= 1.0:
                raise ValueError("sliding factors must lie in (0, 1]")
        if self.reparam_timing not in _TIMING_LETTER:
            raise ValueError(f"unknown reparameterization timing {self.reparam_timing!r}")

    @property
    def is_normal(self) -> bool:
        return self.visible_source == "zero" and self.hidden_source == "zero"

    @property
    def needs_model_mean(self) -> bool:
        return bool({self.visible_source, self.hidden_source} & {"model_mean", "average_dm"})

    @property
    def name(self) -> str:
        return format_policy(self)


def parse_policy(s: str, sliding: float = DEFAULT_SLIDING) -> OffsetPolicy:
    """Parse a short policy name; ``sliding`` is the factor used when ``_s`` is present.

    Without a timing suffix the reparameterization happens before the gradient.
    """
    m = _PATTERN.match(s.strip())
    if m is None:
        raise PolicyParseError(f"cannot parse policy {s!r}; expected {GRAMMAR}")
    vis, hid, smooth, timing = m.groups()
    if smooth and not 0.0 < sliding < 1.0:
        raise PolicyParseError("_s needs a sliding factor strictly below 1")
    if vis == hid == "0":
        # offsets stay zero, so averaging and timing are irrelevant
        return OffsetPolicy()
    nu = sliding if smooth else 1.0
    return OffsetPolicy(SOURCES[vis], SOURCES[hid], nu, nu, TIMINGS[timing or "b"])


def format_policy(p: OffsetPolicy) -> str:
    """Short name of a policy; the inverse of :func:`parse_policy`.

    Normal policies print as bare ``00``. Unequal sliding factors or a
    decoupled chain have no short form and raise ``ValueError``.
    """
    if p.sliding_nu_mu != p.sliding_nu_lambda:
        raise ValueError("policies with different visible and hidden sliding factors have no short name")
    if p.decoupled_offset_samples:
        raise ValueError("decoupled offset sampling has no short name")
    s = _LETTER[p.visible_source] + _LETTER[p.hidden_source]
    if p.is_normal:
        return s
    if p.sliding_nu_mu < 1.0:
        s += "_s"
    return s + "^" + _TIMING_LETTER[p.reparam_timing]


_LAYER_PATTERN = re.compile(r"^([0dmah]+)(_s)?(?:\^([bl]))?$")


@dataclass(frozen=True)
class LayerPolicy:
    """Offset sources for every layer of a deep model, bottom layer first."""

    sources: tuple[str, ...]
    sliding_nu: float = 1.0
    reparam_timing: str = "before_gradient"

    def __post_init__(self):
        for s in self.sources:
            if s not in _LETTER or s == "random":
                raise ValueError(f"unsupported layer offset source {s!r}")
        if not 0.0 < self.sliding_nu <= 1.0:
            raise ValueError("sliding factor must lie in (0, 1]")
        if self.reparam_timing not in _TIMING_LETTER:
            raise ValueError(f"unknown reparameterization timing {self.reparam_timing!r}")

    @property
    def is_normal(self) -> bool:
        return all(s == "zero" for s in self.sources)

    def pair(self, layer: int) -> OffsetPolicy:
        """RBM policy for the layer pair (layer, layer + 1)."""
        return OffsetPolicy(self.sources[layer], self.sources[layer + 1], self.sliding_nu,
                            self.sliding_nu, self.reparam_timing)


def parse_layer_policy(s: str, n_layers: int | None = None,
                       sliding: float = DEFAULT_SLIDING) -> LayerPolicy:
    """Parse names such as ``ddd_s^b`` or ``000``; one letter per layer."""
    m = _LAYER_PATTERN.match(s.strip())
    if m is None:
        raise PolicyParseError(f"cannot parse layer policy {s!r}; letters from 0, d, m, a, h")
    letters, smooth, timing = m.groups()
    if n_layers is not None and len(letters) != n_layers:
        raise PolicyParseError(f"policy {s!r} names {len(letters)} layers, model has {n_layers}")
    return LayerPolicy(tuple(SOURCES[ch] for ch in letters), sliding if smooth else 1.0,
                       TIMINGS[timing or "b"])


def format_layer_policy(p: LayerPolicy) -> str:
    s = "".join(_LETTER[x] for x in p.sources)
    if p.is_normal:
        return s
    return s + ("_s" if p.sliding_nu < 1.0 else "") + "^" + _TIMING_LETTER[p.reparam_timing]
