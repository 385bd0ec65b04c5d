import numpy as np
import pytest

from mteq.channel import (
    AmplifierParams,
    FiberParams,
    SsfmConfig,
    amplifier_for_span,
    beta2_from_D,
    dispersion_halfstep,
    edfa_amplify,
    nonlinear_step,
    propagate_link,
    ssfm_span,
)
from mteq.dsp import CdcConfig, cdc, residual_distortion_metrics
from mteq.rng import derive_seed
from mteq.signal import (
    DualPolWaveform,
    PulseShapeConfig,
    generate_frame,
    matched_filter_and_downsample,
    set_launch_power,
    shape_pulse,
)

# frozen with an independent calculator: -16.8e-6 * (1550e-9)^2 / (2 pi c)
BETA2_REF = -2.1427529751515895e-26


def make_wave(n_symbols=1024, seed=1, rs=40e9, p_dbm=5.0):
    frame = generate_frame(n_symbols, seed=seed)
    w = shape_pulse(frame, PulseShapeConfig(), rs)
    return set_launch_power(w, p_dbm), frame


class TestBeta2:
    def test_zero_dispersion(self):
        assert beta2_from_D(0.0, 1550.0) == 0.0

    def test_reference_value(self):
        b2 = beta2_from_D(16.8, 1550.0)
        assert abs(b2 - BETA2_REF) / abs(BETA2_REF) < 1e-9

    def test_sign_convention(self):
        assert beta2_from_D(16.8, 1550.0) < 0.0
        assert beta2_from_D(-5.0, 1310.0) > 0.0


class TestDispersionStep:
    def test_zero_length_identity(self):
        w, _ = make_wave(256)
        out = dispersion_halfstep(w, BETA2_REF, 0.0, 0.0)
        assert np.max(np.abs(out.x - w.x)) < 1e-15

    def test_unitary_without_loss(self):
        w, _ = make_wave(512)
        out = dispersion_halfstep(w, BETA2_REF, 0.0, 80e3)
        assert abs(out.energy() / w.energy() - 1.0) < 1e-12

    def test_loss_term(self):
        w, _ = make_wave(512)
        alpha = FiberParams().alpha_neper_per_m()
        out = dispersion_halfstep(w, BETA2_REF, alpha, 50e3)
        expected = np.exp(-alpha * 50e3)
        assert abs(out.energy() / w.energy() - expected) < 1e-12

    def test_gaussian_width_oracle(self):
        # closed form: T(z) = T0 sqrt(1 + (beta2 z / T0^2)^2); RMS widths scale alike
        n = 2**14
        fs = 640e9
        t = (np.arange(n) - n / 2) / fs
        t0 = 20e-12
        pulse = np.exp(-(t**2) / (2 * t0**2)).astype(complex)
        w = DualPolWaveform(pulse.copy(), pulse.copy(), fs, fs / 8, 8)

        def rms_width(field):
            p = np.abs(field) ** 2
            mean = np.sum(t * p) / np.sum(p)
            return np.sqrt(np.sum((t - mean) ** 2 * p) / np.sum(p))

        z = 100e3
        out = dispersion_halfstep(w, BETA2_REF, 0.0, z)
        growth = rms_width(out.x) / rms_width(w.x)
        expected = np.sqrt(1.0 + (BETA2_REF * z / t0**2) ** 2)
        assert abs(growth / expected - 1.0) < 1e-3


class TestNonlinearStep:
    def test_zero_length_identity(self):
        w, _ = make_wave(256)
        out = nonlinear_step(w, 1.2, 0.0)
        assert np.max(np.abs(out.x - w.x)) < 1e-15

    def test_cw_spm_phase(self):
        # CW with total power P over length L rotates by exactly (8/9) gamma P L
        n = 1024
        px, py = 1.5e-3, 0.5e-3
        x = np.full(n, np.sqrt(px), dtype=complex)
        y = np.full(n, np.sqrt(py), dtype=complex)
        w = DualPolWaveform(x, y, 320e9, 40e9, 8)
        gamma, length = 1.2, 75e3
        out = nonlinear_step(w, gamma, length)
        expected = (8.0 / 9.0) * (gamma / 1e3) * (px + py) * length
        phase = np.angle(out.x / w.x)
        assert np.max(np.abs(phase - expected)) < 1e-12

    def test_magnitude_preserved(self):
        w, _ = make_wave(512)
        out = nonlinear_step(w, 1.2, 5e4)
        assert np.max(np.abs(np.abs(out.x) - np.abs(w.x))) < 1e-12
        assert np.max(np.abs(np.abs(out.y) - np.abs(w.y))) < 1e-12


class TestSsfmSpan:
    def test_linear_regime_invertible(self):
        w, frame = make_wave(1024, p_dbm=0.0)
        fiber = FiberParams(gamma_per_w_km=0.0, alpha_db_per_km=0.0, span_length_km=50.0)
        out = ssfm_span(w, fiber, SsfmConfig())
        out = cdc(out, CdcConfig(total_length_m=50e3, beta2=fiber.beta2()))
        rx_x, _ = matched_filter_and_downsample(out, PulseShapeConfig(), 1024)
        scale = np.sqrt(np.mean(np.abs(rx_x) ** 2))
        evm, _ = residual_distortion_metrics(rx_x / scale, frame.x_symbols)
        assert evm < -40.0

    def test_energy_conserved_lossless(self):
        w, _ = make_wave(1024, p_dbm=5.0)
        fiber = FiberParams(alpha_db_per_km=0.0, span_length_km=50.0)
        out = ssfm_span(w, fiber, SsfmConfig())
        assert abs(out.energy() / w.energy() - 1.0) < 1e-9

    def test_step_refinement_converges(self):
        # halving the nominal step changes the output by < 1e-4 relative L2
        w, _ = make_wave(1024, p_dbm=5.0)
        fiber = FiberParams(span_length_km=50.0)
        coarse = ssfm_span(w, fiber, SsfmConfig(step_km=1.0, max_nonlinear_phase_rad=0.1))
        fine = ssfm_span(w, fiber, SsfmConfig(step_km=0.5, max_nonlinear_phase_rad=0.1))
        num = np.sqrt(np.sum(np.abs(coarse.x - fine.x) ** 2) + np.sum(np.abs(coarse.y - fine.y) ** 2))
        den = np.sqrt(fine.energy())
        assert num / den < 1e-4


class TestEdfa:
    def test_nsp_formula(self):
        # 10^(4.5/10) / 2, frozen with an independent calculator
        assert abs(AmplifierParams(noise_figure_db=4.5).n_sp() - 1.4091914656322269) < 1e-12

    def test_unity_gain_identity(self):
        w, _ = make_wave(256)
        out = edfa_amplify(w, AmplifierParams(noise_figure_db=4.5, gain_db=0.0), seed=1)
        assert np.array_equal(out.x, w.x)
        assert np.array_equal(out.y, w.y)

    def test_ase_power_matches_formula(self):
        # Monte-Carlo estimate of the added noise power vs (G-1) h nu n_sp B
        n = 10**6
        fs = 320e9
        zero = DualPolWaveform(np.zeros(n, complex), np.zeros(n, complex), fs, 40e9, 8)
        amp = AmplifierParams(noise_figure_db=4.5, gain_db=10.5)
        out = edfa_amplify(zero, amp, seed=42)
        h_nu = 6.62607015e-34 * 2.99792458e8 / 1550e-9
        expected = (amp.gain_linear() - 1.0) * h_nu * amp.n_sp() * fs
        for pol in (out.x, out.y):
            measured = np.mean(np.abs(pol) ** 2)
            assert abs(measured / expected - 1.0) < 0.02

    def test_noise_figure_floor(self):
        with pytest.raises(ValueError):
            AmplifierParams(noise_figure_db=2.9, gain_db=10.0).validate()

    def test_deterministic(self):
        w, _ = make_wave(256)
        amp = AmplifierParams(noise_figure_db=4.5, gain_db=10.5)
        a = edfa_amplify(w, amp, seed=9)
        b = edfa_amplify(w, amp, seed=9)
        assert np.array_equal(a.x, b.x)


class TestPropagateLink:
    def test_single_span_equals_span_plus_edfa(self):
        w, _ = make_wave(512, p_dbm=3.0)
        fiber = FiberParams()
        amp = amplifier_for_span(fiber)
        cfg = SsfmConfig()
        linked = propagate_link(w, 1, fiber, amp, cfg, seed=77)
        manual = edfa_amplify(ssfm_span(w, fiber, cfg), amp, derive_seed(77, "ase", 0))
        assert np.array_equal(linked.x, manual.x)
        assert np.array_equal(linked.y, manual.y)

    def test_linear_link_cdc_restores(self):
        w, frame = make_wave(1024, p_dbm=0.0)
        fiber = FiberParams(gamma_per_w_km=0.0)
        out = propagate_link(w, 3, fiber, amplifier_for_span(fiber), SsfmConfig(), seed=1, ase=False)
        out = cdc(out, CdcConfig(fiber.total_length_m(3), fiber.beta2()))
        rx_x, _ = matched_filter_and_downsample(out, PulseShapeConfig(), 1024)
        scale = np.sqrt(np.mean(np.abs(rx_x) ** 2))
        evm, _ = residual_distortion_metrics(rx_x / scale, frame.x_symbols)
        assert evm < -40.0

    def test_total_length_metadata(self):
        assert FiberParams(span_length_km=50.0).total_length_m(50) == 2_500_000.0

    def test_deterministic_given_seed(self):
        w, _ = make_wave(512, p_dbm=2.0)
        fiber = FiberParams()
        amp = amplifier_for_span(fiber)
        a = propagate_link(w, 2, fiber, amp, SsfmConfig(), seed=5)
        b = propagate_link(w, 2, fiber, amp, SsfmConfig(), seed=5)
        assert np.array_equal(a.x, b.x)

    def test_distinct_ase_per_span(self):
        assert derive_seed(5, "ase", 0) != derive_seed(5, "ase", 1)

    def test_gain_must_match_span_loss(self):
        w, _ = make_wave(256)
        fiber = FiberParams()
        with pytest.raises(ValueError):
            propagate_link(w, 1, fiber, AmplifierParams(gain_db=5.0), SsfmConfig(), seed=1)

    def test_energy_conserved_multi_span_lossless(self):
        w, _ = make_wave(1024, p_dbm=5.0)
        fiber = FiberParams(alpha_db_per_km=0.0, span_length_km=10.0)
        out = propagate_link(w, 10, fiber, amplifier_for_span(fiber), SsfmConfig(), seed=1, ase=False)
        assert abs(out.energy() / w.energy() - 1.0) < 1e-9
