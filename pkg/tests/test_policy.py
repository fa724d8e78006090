import pytest
from hypothesis import given
from hypothesis import strategies as st

from centering.policy import (
    OffsetPolicy,
    PolicyParseError,
    format_layer_policy,
    format_policy,
    parse_layer_policy,
    parse_policy,
)


class TestParse:
    def test_examples(self):
        p = parse_policy("dd_s^l")
        assert (p.visible_source, p.hidden_source) == ("data_mean", "data_mean")
        assert p.sliding_nu_mu == p.sliding_nu_lambda == 0.01
        assert p.reparam_timing == "after_gradient"
        q = parse_policy("aa^b")
        assert q.sliding_nu_mu == 1.0 and q.reparam_timing == "before_gradient"
        assert parse_policy("dm_s^b").hidden_source == "model_mean"
        assert parse_policy("hh").reparam_timing == "before_gradient"

    def test_normal_canonical(self):
        assert parse_policy("00") == OffsetPolicy()
        assert parse_policy("00_s^l") == OffsetPolicy()
        assert parse_policy("00").is_normal

    def test_custom_sliding(self):
        assert parse_policy("dd_s", sliding=0.1).sliding_nu_mu == 0.1
        with pytest.raises(PolicyParseError):
            parse_policy("dd_s", sliding=1.0)

    @pytest.mark.parametrize("bad", ["", "d", "ddd", "dx", "dd^x", "dd_q", "dd^b_s"])
    def test_rejects(self, bad):
        with pytest.raises(PolicyParseError):
            parse_policy(bad)

    def test_needs_model_mean(self):
        assert parse_policy("am").needs_model_mean
        assert not parse_policy("dd").needs_model_mean

    def test_validation(self):
        with pytest.raises(ValueError):
            OffsetPolicy("mean", "zero")
        with pytest.raises(ValueError):
            OffsetPolicy(sliding_nu_mu=0.0)
        with pytest.raises(ValueError):
            OffsetPolicy(reparam_timing="during")


class TestFormat:
    @given(v=st.sampled_from("0dmahr"), h=st.sampled_from("0dmahr"),
           s=st.sampled_from(["", "_s"]), t=st.sampled_from(["^b", "^l"]))
    def test_round_trip(self, v, h, s, t):
        name = v + h + s + t
        p = parse_policy(name)
        assert parse_policy(format_policy(p)) == p
        if not p.is_normal:
            assert format_policy(p) == name

    def test_no_short_name(self):
        with pytest.raises(ValueError):
            format_policy(OffsetPolicy("data_mean", "data_mean", 0.1, 0.2))
        with pytest.raises(ValueError):
            format_policy(OffsetPolicy("data_mean", "data_mean", decoupled_offset_samples=True))


class TestLayerPolicy:
    def test_parse(self):
        p = parse_layer_policy("ddd_s^b", n_layers=3)
        assert p.sources == ("data_mean",) * 3 and p.sliding_nu == 0.01
        pair = p.pair(1)
        assert pair.visible_source == pair.hidden_source == "data_mean"
        assert format_layer_policy(p) == "ddd_s^b"
        assert parse_layer_policy("000").is_normal
        assert format_layer_policy(parse_layer_policy("000")) == "000"

    def test_layer_count(self):
        with pytest.raises(PolicyParseError):
            parse_layer_policy("dd", n_layers=3)

    def test_rejects_random(self):
        with pytest.raises(PolicyParseError):
            parse_layer_policy("drd")
