import numpy as np
import pytest

from biphoton import calibration as cal
from biphoton.units import GAUSSIAN_FWHM_OVER_SIGMA, SINC_SQ_HALF_POWER_ARG, sinc


class TestDldPosition:
    def test_formula_edges(self):
        c = cal.DldCalibration()
        assert cal.dld_position(-c.t_a_ticks, c) == pytest.approx(0.0)
        assert cal.dld_position(0, c) == pytest.approx(c.t_a_ticks * c.v_mm_per_tick / 2)
        assert cal.dld_position(c.t_a_ticks, c) == pytest.approx(c.t_a_ticks * c.v_mm_per_tick)

    def test_out_of_guard_rejected(self):
        c = cal.DldCalibration()
        with pytest.raises(ValueError):
            cal.dld_position(c.t_a_ticks + 1, c)
        cal.dld_position(c.t_a_ticks + 1, c, guard_ticks=2)  # inside guard: fine

    def test_roundtrip_identity(self):
        c = cal.DldCalibration()
        dts = np.arange(-c.t_a_ticks, c.t_a_ticks + 1, 37)
        back = cal.dld_dt(cal.dld_position(dts, c), c)
        assert np.allclose(back, dts, atol=1e-9)

    def test_monotone(self):
        c = cal.DldCalibration()
        xs = cal.dld_position(np.arange(-800, 801), c)
        assert np.all(np.diff(xs) > 0)


class TestSignalWavelength:
    def test_reference_point(self):
        c = cal.DldCalibration()
        assert cal.signal_wavelength(c.x_center_mm, c) == pytest.approx(515.0)

    def test_published_width_pair(self):
        # a 1.86 mm spatial width maps to 1.60 nm with the default dispersion
        c = cal.DldCalibration()
        lam_hi = cal.signal_wavelength(c.x_center_mm + 1.86 / 2, c)
        lam_lo = cal.signal_wavelength(c.x_center_mm - 1.86 / 2, c)
        assert lam_hi - lam_lo == pytest.approx(1.60, rel=1e-12)

    def test_linearity(self):
        c = cal.DldCalibration()
        xs = np.array([2.0, 11.0, 29.0])
        delta = cal.signal_wavelength(xs + 0.5, c) - cal.signal_wavelength(xs, c)
        assert np.allclose(delta, delta[0])

    def test_outside_active_area(self):
        c = cal.DldCalibration()
        with pytest.raises(ValueError):
            cal.signal_wavelength(-0.1, c)
        with pytest.raises(ValueError):
            cal.signal_wavelength(c.active_length_mm + 0.1, c)


class TestIdlerWavelength:
    def test_reference_point(self):
        c = cal.FibreCalibration()
        tau_ticks = c.reference_delay_ps / 25.0
        assert cal.idler_wavelength(tau_ticks, c) == pytest.approx(1550.0)

    def test_dispersion_arithmetic(self):
        # 2550 ps earlier than the reference is +10 nm at -255 ps/nm
        c = cal.FibreCalibration()
        tau_ticks = (c.reference_delay_ps - 2550.0) / 25.0
        assert cal.idler_wavelength(tau_ticks, c) == pytest.approx(1560.0)

    def test_roundtrip_with_forward_map(self):
        c = cal.FibreCalibration()
        lams = np.linspace(1515.0, 1585.0, 17)
        tau_ticks = cal.idler_delay_ps(lams, c) / 25.0
        assert np.allclose(cal.idler_wavelength(tau_ticks, c), lams, atol=1e-9)

    def test_monotone(self):
        c = cal.FibreCalibration()
        lam = cal.idler_wavelength(np.arange(307000, 309000, 10), c)
        assert np.all(np.diff(lam) < 0)  # negative dispersion: later = bluer


class TestFitPeak:
    def test_gaussian_self_consistency(self):
        x = np.linspace(-10, 10, 201)
        sigma = 1.7
        y = 40.0 * np.exp(-(x - 1.25) ** 2 / (2 * sigma**2)) + 3.0
        fit = cal.fit_peak((x, y), model="gaussian")
        assert fit.converged
        assert fit.width == pytest.approx(sigma, rel=1e-6)
        assert fit.center == pytest.approx(1.25, abs=1e-6)
        assert fit.fwhm == pytest.approx(sigma * GAUSSIAN_FWHM_OVER_SIGMA, rel=1e-6)

    def test_sinc_squared_self_consistency(self):
        x = np.linspace(-30, 30, 601)  # includes first side lobes
        w = 2.4
        y = 120.0 * sinc((x - 0.6) / w) ** 2 + 1.0
        fit = cal.fit_peak((x, y), model="sinc_squared")
        assert fit.converged
        assert fit.width == pytest.approx(w, rel=1e-6)
        assert fit.fwhm == pytest.approx(2 * SINC_SQ_HALF_POWER_ARG * w, rel=1e-6)

    def test_poisson_noisy_gaussian_within_2pct(self):
        # bootstrap oracle (200 seeded draws): per-draw sigma errors have
        # median 1.3% and p90 3.3%, so the 2% recovery claim is an
        # ensemble-median statement; assert it over a seeded ensemble
        rng = np.random.Generator(np.random.Philox(key=123))
        x = np.arange(-60.0, 60.0)
        sigma = 8.0
        model = 200.0 * np.exp(-(x**2) / (2 * sigma**2)) + 10.0
        errors = []
        for _ in range(50):
            y = rng.poisson(model)
            fit = cal.fit_peak((x, y.astype(float)), model="gaussian")
            assert fit.converged
            errors.append(abs(fit.width - sigma) / sigma)
        assert float(np.median(errors)) < 0.02

    def test_scale_equivariance(self):
        x = np.linspace(-10, 10, 101)
        y = 25.0 * np.exp(-(x + 0.5) ** 2 / 4.0) + 2.0
        a = cal.fit_peak((x, y), model="gaussian")
        b = cal.fit_peak((x, 10.0 * y), model="gaussian")
        assert b.center == pytest.approx(a.center, abs=1e-8)
        assert b.width == pytest.approx(a.width, rel=1e-8)
        assert b.amplitude == pytest.approx(10 * a.amplitude, rel=1e-8)
        assert b.baseline == pytest.approx(10 * a.baseline, rel=1e-6)

    def test_degenerate_flagged_not_raised(self):
        x = np.arange(20.0)
        spike = np.zeros(20)
        spike[7] = 100.0
        assert not cal.fit_peak((x, spike), model="gaussian").converged
        assert not cal.fit_peak((x, np.full(20, 4.0)), model="gaussian").converged
