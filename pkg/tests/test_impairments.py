"""Impairment transforms: AQNM, IQ imbalance, phase noise, shifter errors, Rapp PA."""

import numpy as np
import pytest

from thzlink.core import RandomSource, cgauss_matrix
from thzlink.impairments import (
    AqnmParams,
    IqImbalanceParams,
    PhaseNoiseParams,
    RappPaParams,
    ShifterErrorParams,
    aqnm_quantize,
    inject_shifter_errors,
    iq_imbalance,
    linear_pa,
    phase_noise_apply,
    rapp_pa,
)


class TestAqnm:
    def test_infinite_resolution_is_identity(self, rng):
        x = cgauss_matrix(4, 100, 1.0, rng)
        out = aqnm_quantize(x, AqnmParams(bits=None), rng.child("q"))
        assert np.array_equal(out, x)

    def test_zero_input_stays_zero(self, rng):
        x = np.zeros((4, 50), dtype=complex)
        out = aqnm_quantize(x, AqnmParams(bits=4), rng.child("q"))
        assert np.all(out == 0)

    def test_alpha_is_one_minus_beta(self):
        p = AqnmParams(bits=4)
        assert p.alpha == pytest.approx(1.0 - p.beta)
        assert p.beta == pytest.approx((np.pi * np.sqrt(3) / 2) * 2 ** (-8), rel=1e-12)
        assert p.beta == pytest.approx(0.010627, rel=1e-3)

    def test_beta_decreases_with_bits(self):
        betas = [AqnmParams(bits=b).beta for b in (2, 4, 6, 8)]
        assert all(b1 > b2 for b1, b2 in zip(betas, betas[1:]))

    def test_literal_beta_variant(self):
        p = AqnmParams(bits=4, literal_beta=True)
        assert p.beta == pytest.approx((np.pi * np.sqrt(3) / 2) / 16.0)

    @pytest.mark.parametrize("bits", [2, 4, 8])
    def test_noise_moment(self, bits):
        """Empirical E|out - alpha x|^2 = alpha*beta*E|x|^2 within 3% at 1e5 samples."""
        p = AqnmParams(bits=bits)
        rng = RandomSource(500 + bits)
        x = cgauss_matrix(4, 25000, 1.0, rng.child("x"))
        out = aqnm_quantize(x, p, rng.child("q"))
        q = out - p.alpha * x
        expected = p.alpha * p.beta * np.mean(np.abs(x) ** 2)
        assert np.mean(np.abs(q) ** 2) == pytest.approx(expected, rel=0.03)

    @pytest.mark.parametrize("bits", [2, 4, 8])
    def test_quantization_snr(self, bits):
        """E|q|^2 / E|alpha x|^2 == beta/alpha within 3%."""
        p = AqnmParams(bits=bits)
        rng = RandomSource(900 + bits)
        x = cgauss_matrix(2, 50000, 2.0, rng.child("x"))
        out = aqnm_quantize(x, p, rng.child("q"))
        q = out - p.alpha * x
        ratio = np.mean(np.abs(q) ** 2) / np.mean(np.abs(p.alpha * x) ** 2)
        assert ratio == pytest.approx(p.beta / p.alpha, rel=0.03)


class TestIqImbalance:
    def test_identity_params_pass_through(self, rng):
        x = cgauss_matrix(3, 40, 1.0, rng)
        out = iq_imbalance(x, IqImbalanceParams.identity(3))
        assert np.allclose(out, x, atol=0, rtol=0)

    def test_gamma_sum_is_one(self, rng):
        p = IqImbalanceParams.draw(6, (0.9, 1.1), (-20, 20), rng)
        assert np.allclose(p.gamma1 + p.gamma2, 1.0, atol=1e-15)

    def test_real_input_unchanged(self):
        """Gamma1 + Gamma2 = 1 makes any real-valued signal pass through."""
        p = IqImbalanceParams(gain=np.array([0.9]), phase_rad=np.array([np.deg2rad(20)]))
        x = np.array([[1.0 + 0j, -0.5 + 0j, 2.0 + 0j]])
        assert np.allclose(iq_imbalance(x, p), x, atol=1e-15)

    def test_row_count_mismatch_rejected(self, rng):
        x = cgauss_matrix(4, 10, 1.0, rng)
        with pytest.raises(ValueError):
            iq_imbalance(x, IqImbalanceParams.identity(3))

    def test_draw_within_ranges(self, rng):
        p = IqImbalanceParams.draw(100, (0.9, 1.1), (-20, 20), rng)
        assert np.all((p.gain >= 0.9) & (p.gain <= 1.1))
        assert np.all(np.abs(p.phase_rad) <= np.deg2rad(20) + 1e-12)


class TestPhaseNoise:
    def test_zero_variance_identity(self, rng):
        x = cgauss_matrix(4, 30, 1.0, rng)
        out = phase_noise_apply(x, PhaseNoiseParams(0.0), rng.child("pn"))
        assert np.array_equal(out, x)

    def test_magnitude_preserved(self, rng):
        x = cgauss_matrix(4, 200, 1.0, rng)
        out = phase_noise_apply(x, PhaseNoiseParams(1e-2), rng.child("pn"))
        assert np.allclose(np.abs(out), np.abs(x), rtol=1e-12)

    def test_sample_variance(self):
        """Recovered phase variance matches 1e-2 within 5% over 1e5 draws."""
        rng = RandomSource(321)
        x = np.ones((10, 10000), dtype=complex)
        out = phase_noise_apply(x, PhaseNoiseParams(1e-2), rng)
        theta = np.angle(out)
        assert np.var(theta) == pytest.approx(1e-2, rel=0.05)

    def test_negative_variance_rejected(self):
        with pytest.raises(ValueError):
            PhaseNoiseParams(-1.0)


class TestShifterErrors:
    def test_zero_spread_identity(self, rng):
        f = cgauss_matrix(8, 2, 1.0, rng)
        p = ShifterErrorParams.draw(8, 2, 0.0, 0.0, rng.child("e"))
        assert np.allclose(inject_shifter_errors(f, p), f, atol=1e-15)

    def test_modulus_of_injected_matrix(self, rng):
        n_t = 16
        f = np.exp(1j * rng.generator().uniform(0, 2 * np.pi, (n_t, 2))) / np.sqrt(n_t)
        p = ShifterErrorParams.draw(n_t, 2, 1.2, 10.2, rng.child("e"))
        out = inject_shifter_errors(f, p)
        expected = np.abs(p.errors) / np.sqrt(n_t)
        assert np.allclose(np.abs(out), expected, rtol=1e-12)

    def test_amplitude_error_mean_near_zero(self):
        """Sample mean of E_alpha over 256x4 draws within 3 sigma/sqrt(n) of 0."""
        p = ShifterErrorParams.draw(256, 4, 1.2, 10.2, RandomSource(777))
        e_alpha_db = 10.0 * np.log10(np.abs(p.errors))
        n = e_alpha_db.size
        bound = 3.0 * np.sqrt(1.2) / np.sqrt(n)
        assert abs(np.mean(e_alpha_db)) < bound

    def test_db20_convention_available(self, rng):
        p10 = ShifterErrorParams.draw(64, 4, 1.2, 0.0, rng.child("e"), db_divisor=10.0)
        p20 = ShifterErrorParams.draw(64, 4, 1.2, 0.0, rng.child("e"), db_divisor=20.0)
        # same draws, half the dB exponent: amplitudes are the square root
        assert np.allclose(np.abs(p20.errors), np.sqrt(np.abs(p10.errors)), rtol=1e-12)

    def test_shape_mismatch_rejected(self, rng):
        p = ShifterErrorParams.identity(8, 2)
        with pytest.raises(ValueError):
            inject_shifter_errors(np.ones((8, 3)), p)


class TestRappPa:
    def test_zero_input_zero_output(self):
        x = np.zeros((4, 4), dtype=complex)
        assert np.all(rapp_pa(x, RappPaParams()) == 0)

    def test_saturation_limit(self):
        p = RappPaParams()
        x = np.array([[1e3 + 0j]])
        assert abs(rapp_pa(x, p)[0, 0]) == pytest.approx(p.x_sat, rel=1e-3)

    def test_small_signal_gain(self):
        """|out|/|x| -> alpha_a (13.46 dB) deep in the linear region."""
        p = RappPaParams()
        x = np.array([[1e-4 + 0j]])
        gain = abs(rapp_pa(x, p)[0, 0]) / 1e-4
        assert gain == pytest.approx(p.alpha_a, rel=1e-3)
        assert 20 * np.log10(gain) == pytest.approx(13.46, abs=0.01)

    def test_am_am_monotone(self):
        p = RappPaParams()
        a = np.linspace(1e-6, 10.0, 10000)
        out = np.abs(rapp_pa(a.astype(complex).reshape(1, -1), p))[0]
        assert np.all(np.diff(out) > 0)

    def test_am_am_bounded_by_saturation(self):
        p = RappPaParams()
        a = np.linspace(1e-6, 100.0, 5000)
        out = np.abs(rapp_pa(a.astype(complex).reshape(1, -1), p))[0]
        assert np.all(out < p.x_sat)

    def test_phase_shift_sign_and_growth(self):
        """AM-PM phase advance is larger near saturation than in backoff."""
        p = RappPaParams()
        small = rapp_pa(np.array([[0.01 + 0j]]), p)[0, 0]
        large = rapp_pa(np.array([[0.15 + 0j]]), p)[0, 0]
        assert abs(np.angle(large)) > abs(np.angle(small))


class TestLinearPa:
    def test_zero_db_identity(self, rng):
        x = cgauss_matrix(3, 10, 1.0, rng)
        assert np.allclose(linear_pa(x, 0.0), x, atol=0)

    def test_13db_gain(self):
        out = linear_pa(np.array([[1.0 + 0j]]), 13.0)
        assert abs(out[0, 0]) == pytest.approx(4.4668, abs=1e-3)

    def test_small_signal_matches_rapp(self):
        """Linear PA at the nominal gain and the Rapp PA agree within 5% at
        -40 dBm drive (exact small-signal equivalence at 20 log10(alpha_a))."""
        p = RappPaParams()
        amp = np.sqrt(10 ** (-40 / 10.0))  # sqrt(1e-4 mW)
        x = np.full((2, 5), amp + 0j)
        lin = linear_pa(x, 20.0 * np.log10(p.alpha_a))
        nonlin = rapp_pa(x, p)
        assert np.allclose(nonlin, lin, rtol=0.05)
        assert np.allclose(np.abs(nonlin), np.abs(lin), rtol=1e-3)
