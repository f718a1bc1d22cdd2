import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate

from mcdiffusim import (
    SeriesParams,
    TimeGrid,
    cumulative_single,
    erfc,
    free_space_concentration,
    hitting_rate,
    peak_time,
    two_receiver_cir,
    two_receiver_cumulative,
)

D = 79.4


class TestErfc:
    def test_frozen_values(self):
        assert erfc(0.0) == pytest.approx(1.0, rel=1e-14)
        # high-precision quadrature of the defining integral
        assert erfc(0.19839) == pytest.approx(0.779043428445726, rel=1e-12)
        assert erfc(1.0) == pytest.approx(0.15729920705028513, rel=1e-12)

    @given(st.floats(-10, 10))
    def test_reflection(self, x):
        assert erfc(-x) + erfc(x) == pytest.approx(2.0, abs=1e-13)

    def test_vectorized(self):
        x = np.linspace(-3, 3, 7)
        np.testing.assert_allclose(erfc(x), [erfc(v) for v in x], rtol=1e-14)


class TestFreeSpace:
    def test_frozen_value(self):
        # Q / sqrt(4 pi D t^3) * exp(-r^2 / (4 D t)) at Q=1, r=1, D=79.4, t=0.01
        assert free_space_concentration(1.0, 1.0, 0.01, D) == pytest.approx(
            23.10692856452874, rel=1e-12)

    def test_nonpositive_time_rejected(self):
        with pytest.raises(ValueError):
            free_space_concentration(1.0, 1.0, 0.0, D)

    def test_scales_linearly_in_q(self):
        one = free_space_concentration(1.0, 2.0, 0.1, D)
        assert free_space_concentration(7.0, 2.0, 0.1, D) == pytest.approx(7 * one, rel=1e-14)


class TestHittingRate:
    def test_zero_at_zero(self):
        assert hitting_rate(6.0, 1.0, D, 0.0) == 0.0

    def test_frozen_value(self):
        assert hitting_rate(6.0, 1.0, D, 0.05) == pytest.approx(
            0.48880494289997665, rel=1e-12)

    def test_array_matches_scalar(self):
        t = np.array([0.0, 0.01, 0.05, 0.5, 2.0])
        np.testing.assert_allclose(
            hitting_rate(6.0, 1.0, D, t), [hitting_rate(6.0, 1.0, D, v) for v in t],
            rtol=1e-14)

    def test_peak_location(self):
        tp = peak_time(6.0, 1.0, D)
        assert tp == pytest.approx(25.0 / (6 * D), rel=1e-14)
        eps = 1e-6
        at_peak = hitting_rate(6.0, 1.0, D, tp)
        assert at_peak > hitting_rate(6.0, 1.0, D, tp - eps)
        assert at_peak > hitting_rate(6.0, 1.0, D, tp + eps)

    def test_improper_integral_is_hitting_probability(self):
        # total first-hit probability over (0, inf) equals R/r
        val, err = integrate.quad(
            lambda t: hitting_rate(6.0, 1.0, D, t), 0, np.inf, limit=400)
        assert val == pytest.approx(1.0 / 6.0, abs=1e-8)

    def test_integral_matches_cumulative(self):
        for t_end in (0.05, 0.5, 2.0):
            val, _ = integrate.quad(
                lambda t: hitting_rate(6.0, 1.0, D, t), 0, t_end, limit=200)
            assert 1e4 * val == pytest.approx(
                cumulative_single(1e4, 6.0, 1.0, D, t_end), rel=1e-9)

    def test_invalid_geometry_rejected(self):
        with pytest.raises(ValueError):
            hitting_rate(0.5, 1.0, D, 0.1)
        with pytest.raises(ValueError):
            hitting_rate(6.0, -1.0, D, 0.1)


class TestCumulativeSingle:
    def test_frozen_values(self):
        assert cumulative_single(1e4, 6.0, 1.0, D, 2.0) == pytest.approx(
            1298.409858430208, rel=1e-12)
        assert cumulative_single(1e4, 6.0, 1.0, D, 0.5) == pytest.approx(
            957.8536797582143, rel=1e-12)

    def test_limit_is_hitting_probability(self):
        assert cumulative_single(1e4, 6.0, 1.0, D, 1e12) == pytest.approx(
            1e4 / 6.0, rel=1e-6)

    def test_monotone_nondecreasing(self):
        t = np.linspace(0, 2, 400)
        n = cumulative_single(1e4, 6.0, 1.0, D, t)
        assert n[0] == 0.0
        assert np.all(np.diff(n) >= 0)


def c_model_params(r_r=6.0, r_i=6.0, d=3.0, radius=1.0):
    return SeriesParams.from_distances(r_r, r_i, d, d, radius, D)


class TestSeriesParams:
    def test_c_model_symmetric_values(self):
        p = c_model_params()
        assert p.alpha == pytest.approx(1 / 6, rel=1e-14)
        assert p.kappa == pytest.approx(1 / 9, rel=1e-14)
        assert p.delta == pytest.approx(1 / 18, rel=1e-14)
        assert p.beta == pytest.approx(5 / math.sqrt(D), rel=1e-14)
        assert p.epsilon == pytest.approx(7 / math.sqrt(D), rel=1e-14)
        assert p.gamma_s == pytest.approx(4 / math.sqrt(D), rel=1e-14)

    def test_divergent_kappa_rejected(self):
        with pytest.raises(ValueError, match="kappa"):
            SeriesParams(alpha=0.1, beta=1.0, delta=0.1, epsilon=1.0,
                         kappa=1.5, gamma_s=1.0)


class TestTwoReceiverCumulative:
    def test_frozen_c_model_values(self):
        p = c_model_params()
        for t, expected in [(0.25, 588.4040123333953), (0.5, 764.7093729034089),
                            (1.0, 900.4292866664399), (2.0, 1000.5034349573173)]:
            assert two_receiver_cumulative(p, 1e4, t) == pytest.approx(expected, rel=1e-10)

    def test_frozen_s_model_asymmetric_values(self):
        # receiver at r=6, interferer at r=4 on the transmitter axis,
        # sources at the facing surface points: d_RI=3, d_IR=1
        p = SeriesParams.from_distances(6.0, 4.0, 3.0, 1.0, 1.0, D)
        assert two_receiver_cumulative(p, 1e4, 2.0) == pytest.approx(
            922.2043104997140, rel=1e-10)
        assert two_receiver_cumulative(p, 1e4, 0.5) == pytest.approx(
            636.4750625769129, rel=1e-10)

    def test_long_time_limit_geometric_sum(self):
        # t -> inf: erfc -> 1, so N -> N_T (alpha - delta) / (1 - kappa)
        p = c_model_params()
        assert two_receiver_cumulative(p, 1e4, 1e12) == pytest.approx(1250.0, rel=1e-6)

    def test_interference_reduces_absorption(self):
        p = c_model_params()
        t = np.linspace(0.01, 2, 50)
        with_int = two_receiver_cumulative(p, 1e4, t)
        isolated = cumulative_single(1e4, 6.0, 1.0, D, t)
        assert np.all(with_int < isolated)

    def test_far_interferer_recovers_single_receiver(self):
        # Interferer pushed out to d = 100 r_R: the series collapses onto the
        # isolated closed form to machine precision.
        d = 600.0
        p = SeriesParams.from_distances(6.0, d, d, d, 1.0, D)
        t = np.linspace(0.05, 2, 40)
        np.testing.assert_allclose(
            two_receiver_cumulative(p, 1e4, t),
            cumulative_single(1e4, 6.0, 1.0, D, t), rtol=1e-13)

    def test_zero_at_zero_and_monotone(self):
        p = c_model_params()
        t = np.linspace(0, 2, 300)
        n = two_receiver_cumulative(p, 1e4, t)
        assert n[0] == 0.0
        assert np.all(np.diff(n) > 0)


class TestTwoReceiverCir:
    def test_frozen_value(self):
        p = c_model_params()
        assert two_receiver_cir(p, 0.1) == pytest.approx(0.3081173015074089, rel=1e-10)

    def test_is_derivative_of_cumulative(self):
        p = c_model_params()
        for t in (0.05, 0.2, 1.0):
            h = 1e-6
            fd = (two_receiver_cumulative(p, 1.0, t + h)
                  - two_receiver_cumulative(p, 1.0, t - h)) / (2 * h)
            assert two_receiver_cir(p, t) == pytest.approx(fd, rel=1e-6)

    def test_zero_at_zero(self):
        assert two_receiver_cir(c_model_params(), 0.0) == 0.0


class TestTimeGrid:
    def test_basic(self):
        g = TimeGrid(dt=0.25, steps=8)
        assert g.horizon == pytest.approx(2.0)
        np.testing.assert_allclose(g.times, np.arange(1, 9) * 0.25)
        np.testing.assert_allclose(g.times_from_zero, np.arange(9) * 0.25)

    def test_from_horizon(self):
        g = TimeGrid.from_horizon(1e-3, 2.0)
        assert g.steps == 2000
        assert g.times[-1] == pytest.approx(2.0)

    def test_validation(self):
        with pytest.raises(ValueError):
            TimeGrid(dt=0.0, steps=5)
        with pytest.raises(ValueError):
            TimeGrid(dt=0.1, steps=0)
