import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from totedge.channel import LinkParams, NodePosition, link_rate, path_loss, sample_fading, to_model_distance, tx_time
from totedge.errors import ConfigError, DomainError, UnreachableLinkError


def test_path_loss_examples():
    assert path_loss(1.0) == 127.0
    assert path_loss(10.0) == pytest.approx(157.0, abs=1e-12)
    assert path_loss(0.05) == pytest.approx(127 + 30 * math.log10(0.05), abs=1e-12)
    assert path_loss(0.05) == pytest.approx(87.969, abs=5e-4)


@pytest.mark.parametrize("d", [0.0, -1.0])
def test_path_loss_domain(d):
    with pytest.raises(DomainError):
        path_loss(d)


def test_fading_moments():
    g = sample_fading(np.random.default_rng(0), size=100_000)
    assert (g >= 0).all()
    assert 0.99 <= g.mean() <= 1.01
    assert abs((g > 1).mean() - math.exp(-1)) < 0.01


def test_link_rate_reference_value():
    # chained scalar evaluation: PL -> linear gain -> SNR -> Shannon rate
    pl = 127 + 30 * math.log10(0.05)
    h = 10 ** (-pl / 10)
    snr = 1.0 * h / (2e6 * 4e-21)
    assert h == pytest.approx(1.596e-9, rel=1e-3)
    assert snr == pytest.approx(1.995e5, rel=1e-3)
    r = link_rate(LinkParams(2e6, 1.0, 4e-21), 1.0, 0.05)
    assert r == pytest.approx(2e6 * math.log2(1 + snr), rel=1e-12)
    assert r == pytest.approx(35.2e6, rel=1e-3)


def test_zero_gain_zero_rate():
    assert link_rate(LinkParams(), 0.0, 0.05) == 0.0


def test_meter_reading_is_sub_kbps_at_50m():
    r = link_rate(LinkParams(), 1.0, to_model_distance(50.0, "m"))
    assert r < 1000.0


def test_distance_units():
    assert to_model_distance(50.0, "km") == pytest.approx(0.05)
    assert to_model_distance(50.0, "m") == 50.0
    with pytest.raises(ConfigError):
        to_model_distance(1.0, "mi")
    assert NodePosition(0, 0).distance_m(NodePosition(3, 4)) == 5.0


def test_link_params_validated():
    with pytest.raises(ConfigError):
        LinkParams(bandwidth_hz=0.0)


def test_tx_time():
    assert tx_time(0, 0.0) == 0.0
    assert tx_time(8000, 8000) == 1.0
    assert tx_time(60_000, 35.2e6) == 60_000 / 35.2e6
    assert tx_time(60_000, 35.2e6) == pytest.approx(1.70e-3, abs=5e-6)
    with pytest.raises(UnreachableLinkError):
        tx_time(10, 0.0)


def test_rate_monotone_in_distance_over_random_draws():
    r = np.random.default_rng(3)
    for _ in range(1000):
        p = LinkParams(r.uniform(1e5, 1e7), r.uniform(0.01, 2.0), r.uniform(1e-22, 1e-19))
        g = r.exponential()
        d1, d2 = np.sort(r.uniform(1e-3, 1.0, size=2))
        assert link_rate(p, g, d1) >= link_rate(p, g, d2)


@given(
    gain=st.floats(1e-6, 50.0),
    d=st.floats(1e-3, 10.0),
    power=st.floats(1e-3, 10.0),
)
def test_rate_properties(gain, d, power):
    r = link_rate(LinkParams(power_w=power), gain, d)
    assert math.isfinite(r) and r >= 0
    assert link_rate(LinkParams(power_w=2 * power), gain, d) >= r
    assert link_rate(LinkParams(power_w=power), 2 * gain, d) >= r
