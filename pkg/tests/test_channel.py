import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mpr_estimation.channel import (Action, ArrivalDistribution, ChannelParams, Receiver,
                                    arrival_distribution, arrival_distribution_closed_form2,
                                    arrival_distribution_mc, decode, decode_batch,
                                    gamma_string, marginal_success, outcome_bits,
                                    outcome_index)


def channel(s=(1.0, 1.0), sigma2=0.1, alpha=0.75, receiver="sic", levels=(0.0, 1.0)):
    return ChannelParams(s, (levels,) * len(s), sigma2, alpha, receiver)


def decode_reference(prx, sigma2, alpha, receiver):
    """Literal per-sample decoder used as an oracle."""
    prx = list(prx)
    n = len(prx)
    ok = [False] * n
    if receiver == "simple":
        for i in range(n):
            if prx[i] > 0:
                ok[i] = prx[i] > alpha * (sum(prx) - prx[i] + sigma2)
        return ok
    order = sorted(range(n), key=lambda i: (-prx[i], i))
    remaining = set(range(n))
    for i in order:
        remaining.discard(i)
        if prx[i] <= 0:
            break
        if prx[i] > alpha * (sum(prx[j] for j in remaining) + sigma2):
            ok[i] = True
        else:
            break
    return ok


# ---------------------------------------------------------------------------
# Parameters and outcome encoding


def test_outcome_order_two_sensors():
    assert [gamma_string(b) for b in outcome_bits(2)] == ["00", "10", "01", "11"]
    assert outcome_index((0, 1)) == 2


def test_action_grid_ordering():
    ch = channel(levels=(0.0, 0.5, 1.0))
    grid = ch.action_grid()
    assert len(grid) == 9
    assert grid[0].powers == (0.0, 0.0)
    assert grid[1].powers == (0.0, 0.5) and grid[2].powers == (0.5, 0.0)
    totals = [a.total for a in grid]
    assert totals == sorted(totals)


@pytest.mark.parametrize("kw,field", [
    ({"s": (1.0, -1.0)}, "s"),
    ({"sigma2": -0.1}, "sigma2"),
    ({"alpha": 0.0}, "alpha"),
    ({"levels": (0.1, 1.0)}, "power_sets"),
])
def test_channel_validation(kw, field):
    with pytest.raises(ValueError, match=field):
        channel(**kw)


def test_action_rejects_unknown_power():
    with pytest.raises(ValueError):
        channel().action((0.3, 0.0))


def test_distribution_validation():
    with pytest.raises(ValueError):
        ArrivalDistribution(np.array([0.5, 0.6, 0.0, 0.0]))
    with pytest.raises(ValueError):
        ArrivalDistribution(np.array([0.5, 0.5, 0.0]))
    d = ArrivalDistribution(np.array([0.1, 0.2, 0.3, 0.4]))
    assert d.prob((1, 1)) == 0.4
    assert marginal_success(d, 0) == pytest.approx(0.6)
    with pytest.raises(ValueError):
        d.probs[0] = 1.0


# ---------------------------------------------------------------------------
# Decoder


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 40), min_size=1, max_size=4),
       st.integers(0, 8), st.integers(1, 32), st.sampled_from(["simple", "sic"]))
def test_decode_batch_matches_reference(prx, sigma2, alpha, receiver):
    # dyadic grid: every sum and product below is exact in floating point
    prx = [p / 8 for p in prx]
    sigma2, alpha = sigma2 / 8, alpha / 16
    got = decode_batch(np.array([prx]), sigma2, alpha, Receiver(receiver))[0]
    assert list(got) == decode_reference(prx, sigma2, alpha, receiver)


def test_sic_tie_lower_index_first():
    # equal received powers: sensor 0 is decoded first, sensor 1 then sees no interference
    ok = decode((1.0, 1.0), channel(sigma2=0.0, alpha=0.9))
    assert ok == (1, 1)
    ok = decode((1.0, 1.0), channel(sigma2=0.2, alpha=1.5))
    assert ok == (0, 0)


def test_sic_cascade_stops_after_failure():
    # strongest fails, so the weaker ones are not attempted
    ok = decode_batch(np.array([[1.0, 0.95, 0.9]]), 0.1, 0.6, Receiver.SIC)[0]
    assert not ok.any()


# ---------------------------------------------------------------------------
# Arrival distributions


def test_single_transmitter_closed_form():
    ch = channel(sigma2=0.3, alpha=0.5, s=(2.0, 1.0))
    d = arrival_distribution_closed_form2(Action((1.0, 0.0)), ch)
    q = math.exp(-0.5 * 0.3 / 2.0)
    np.testing.assert_allclose(d.probs, [1 - q, q, 0, 0], atol=1e-15)
    assert arrival_distribution(Action((0.0, 0.0)), ch).probs[0] == 1.0


@pytest.mark.parametrize("receiver", ["simple", "sic"])
@pytest.mark.parametrize("s,sigma2,alpha", [
    ((1.0, 1.0), 0.4, 0.6), ((2.0, 0.5), 0.1, 0.3), ((1.0, 3.0), 0.0, 0.9),
])
def test_closed_form_matches_monte_carlo(receiver, s, sigma2, alpha):
    ch = channel(s=s, sigma2=sigma2, alpha=alpha, receiver=receiver)
    u = Action((1.0, 1.0))
    exact = arrival_distribution_closed_form2(u, ch).probs
    assert exact.sum() == pytest.approx(1.0, abs=1e-14)
    n = 200_000
    mc = arrival_distribution_mc(u, ch, n, rng=7).probs
    se = np.sqrt(exact * (1 - exact) / n) + 1e-12
    assert np.all(np.abs(mc - exact) <= 4 * se)


def test_sic_known_value():
    # oracle: one-dimensional integral over the weaker fading gain
    from scipy import integrate
    a, s2 = 0.6, 0.4
    ch = channel(sigma2=s2, alpha=a)
    got = arrival_distribution_closed_form2(Action((1.0, 1.0)), ch).probs

    def stronger_is_1(r2):
        # r1 >= r2, r1 > a (r2 + s2), r2 > a s2
        return math.exp(-r2) * math.exp(-max(r2, a * (r2 + s2)))
    kink = a * s2 / (1 - a)
    half = integrate.quad(stronger_is_1, a * s2, 60, points=[kink], epsabs=1e-13)[0]
    assert got[3] == pytest.approx(2 * half, abs=1e-10)


def test_sic_dominates_simple(drone_channel):
    simple = drone_channel.with_receiver("simple")
    for u in drone_channel.action_grid():
        a = arrival_distribution(u, drone_channel)
        b = arrival_distribution(u, simple)
        assert a.probs[0] == pytest.approx(b.probs[0], abs=1e-12)
        for i in range(2):
            assert marginal_success(a, i) >= marginal_success(b, i) - 1e-12


def test_noiseless_symmetric_sic_always_both():
    ch = channel(sigma2=0.0, alpha=0.5)
    assert arrival_distribution(Action((1.0, 1.0)), ch).probs[3] == pytest.approx(1.0)


def test_three_sensors_simple_cannot_all_succeed():
    # three SINRs above 0.6 would need each power above 0.375 of the total
    ch = channel(s=(1.0, 1.0, 1.0), sigma2=0.1, alpha=0.6, receiver="simple")
    d = arrival_distribution_mc(Action((1.0, 1.0, 1.0)), ch, 100_000, rng=3)
    assert d.prob((1, 1, 1)) == 0.0
    sic = arrival_distribution_mc(Action((1.0, 1.0, 1.0)), ch.with_receiver("sic"),
                                  100_000, rng=3)
    assert sic.prob((1, 1, 1)) > 0.0


def test_monte_carlo_reproducible():
    ch = channel(s=(1.0, 1.0, 1.0), receiver="sic")
    u = Action((1.0, 1.0, 1.0))
    a = arrival_distribution(u, ch, 10_000, 5).probs
    b = arrival_distribution_mc(u, ch, 10_000, rng=np.random.Generator(
        np.random.Philox(np.random.SeedSequence(5, spawn_key=(1, 1, 1))))).probs
    np.testing.assert_array_equal(a, b)


def test_alpha_above_one_uses_monte_carlo():
    ch = channel(alpha=1.5)
    with pytest.raises(ValueError):
        arrival_distribution_closed_form2(Action((1.0, 1.0)), ch)
    d = arrival_distribution(Action((1.0, 1.0)), ch, 20_000)
    # both packets can never pass a threshold above 1 without SIC
    assert d.probs.sum() == pytest.approx(1.0)
    simple = arrival_distribution(Action((1.0, 1.0)), ch.with_receiver("simple"), 20_000)
    assert simple.prob((1, 1)) == 0.0


def test_simple_both_success_by_quadrature():
    # received powers are exponential with rates lam_i; integrate the joint
    # region x1 > a (x2 + s2), x2 > a (x1 + s2)
    from scipy import integrate
    lam1, lam2, a, s2 = 1.5, 2.8, 0.38, 0.18
    ch = ChannelParams((1 / lam1, 1 / lam2), ((0.0, 1.0),) * 2, s2, a, "simple")

    def inner(x2):
        lo, hi = a * (x2 + s2), x2 / a - s2
        if hi <= lo:
            return 0.0
        return lam2 * math.exp(-lam2 * x2) * (math.exp(-lam1 * lo) - math.exp(-lam1 * hi))
    ref = integrate.quad(inner, 0, 60, limit=500, epsabs=1e-13)[0]
    got = arrival_distribution_closed_form2(Action((1.0, 1.0)), ch).prob((1, 1))
    assert got == pytest.approx(ref, abs=1e-11)
