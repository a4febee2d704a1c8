"""Tests for the transmission model and its derived quantities."""

import math

import numpy as np
import pytest

from spincavity.errors import DegenerateLinewidth
from spincavity.inout import (
    QFactors,
    ResonatorParams,
    SpinResonance,
    TransmissionModelParams,
    cooperativity,
    gamma_to_linewidth,
    linewidth_to_gamma,
    lorentzian,
    normal_mode_peaks,
    q_factors,
    s21_map,
    s21_power,
    s21_power_gradients,
)
from spincavity.spinsystem import SpinSystemParams, TransitionId, resonance_field

# reference operating point used throughout
OMEGA_R = 4.931e9
KAPPA_0 = 370e3
KAPPA_C = OMEGA_R / (2 * 9793)  # from the external quality factor

RESONATOR = ResonatorParams(omega_r=OMEGA_R, kappa_0=KAPPA_0, kappa_c=KAPPA_C)
B_LF = 0.1741604
B_HF = 0.1783627
RES_LF = SpinResonance(b_res=B_LF, gamma=1.38e6, g_eff=1.13e6)
RES_HF = SpinResonance(b_res=B_HF, gamma=1.40e6, g_eff=1.07e6)
MODEL = TransmissionModelParams(resonator=RESONATOR, resonances=(RES_LF, RES_HF))
BARE = TransmissionModelParams(resonator=RESONATOR)


class TestResonatorParams:
    def test_validation(self):
        with pytest.raises(ValueError):
            ResonatorParams(OMEGA_R, KAPPA_0, 2 * KAPPA_0)
        with pytest.raises(ValueError):
            ResonatorParams(OMEGA_R, KAPPA_0, 0.0)
        with pytest.raises(DegenerateLinewidth):
            ResonatorParams(OMEGA_R, 0.0, 0.0)

    def test_kappa_int(self):
        assert RESONATOR.kappa_int == pytest.approx(KAPPA_0 - KAPPA_C)


class TestQFactors:
    def test_reference_values(self):
        q = q_factors(RESONATOR)
        assert 6600 <= q.loaded <= 6700
        assert q.external == pytest.approx(9793, rel=1e-6)
        assert q.internal == pytest.approx(20857, rel=5e-3)

    def test_harmonic_identity(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            k0 = 10 ** rng.uniform(3, 7)
            kc = k0 * rng.uniform(0.05, 1.0)
            q = q_factors(ResonatorParams(5e9, k0, kc))
            lhs = 1.0 / q.loaded
            rhs = 1.0 / q.external + (0.0 if math.isinf(q.internal) else 1.0 / q.internal)
            assert lhs == pytest.approx(rhs, rel=1e-12)

    def test_harmonic_combination_of_reference_qs(self):
        q_loaded = 1.0 / (1.0 / 9793 + 1.0 / 20857)
        assert q_loaded == pytest.approx(q_factors(RESONATOR).loaded, rel=5e-3)

    def test_critical_coupling_symmetry(self):
        q = q_factors(ResonatorParams(5e9, 400e3, 200e3))
        assert q.external == q.internal

    def test_overcoupled_limit_flag(self):
        q = q_factors(ResonatorParams(5e9, 400e3, 400e3))
        assert math.isinf(q.internal)
        assert q.overcoupled_limit
        assert not q_factors(RESONATOR).overcoupled_limit


class TestS21Power:
    def test_bare_on_resonance(self):
        val = s21_power(BARE, OMEGA_R, 0.0)
        assert val == pytest.approx((KAPPA_C / KAPPA_0) ** 2, rel=1e-12)
        assert val == pytest.approx(0.463, abs=5e-3)

    def test_matches_lorentzian_without_spins(self):
        omega = np.linspace(OMEGA_R - 5e6, OMEGA_R + 5e6, 1001)
        ref = lorentzian(omega, OMEGA_R, KAPPA_0, (KAPPA_C / KAPPA_0) ** 2, 0.0)
        assert np.abs(s21_power(BARE, omega, 0.0) - ref).max() < 1e-12

    def test_far_detuned_is_symmetric_bare_line(self):
        omega = np.linspace(OMEGA_R - 3e6, OMEGA_R + 3e6, 801)
        # without spins the line is exactly symmetric about omega_r
        p_bare = s21_power(BARE, omega, 0.0)
        assert np.abs(p_bare - p_bare[::-1]).max() < 1e-14
        # 50 mT away the residual spin pull still shifts the line by
        # ~1 kHz, so symmetry and the HWHM hold only approximately
        p = s21_power(MODEL, omega, B_LF - 50e-3)
        assert np.abs(p - p[::-1]).max() < 5e-3
        half = s21_power(MODEL, OMEGA_R + KAPPA_0, B_LF - 50e-3)
        peak = s21_power(MODEL, OMEGA_R, B_LF - 50e-3)
        assert half == pytest.approx(peak / 2, rel=1e-2)

    def test_on_resonance_suppression_high_field(self):
        single = TransmissionModelParams(
            resonator=RESONATOR,
            resonances=(SpinResonance(b_res=B_HF, gamma=1.40e6, g_eff=1.07e6),),
        )
        bare = s21_power(BARE, OMEGA_R, B_HF)
        coupled = s21_power(single, OMEGA_R, B_HF)
        c = cooperativity(1.07e6, KAPPA_0, 1.40e6)
        assert bare / coupled == pytest.approx((1 + c) ** 2, rel=1e-10)
        assert bare / coupled == pytest.approx(10.0, rel=0.05)

    def test_permutation_invariant_bitwise(self):
        extras = (
            SpinResonance(b_res=0.1755, gamma=8e6, g_eff=0.6e6),
            SpinResonance(b_res=0.1763, gamma=1.8e6, g_eff=0.4e6),
        )
        omega = np.linspace(OMEGA_R - 8e6, OMEGA_R + 8e6, 501)
        orders = [
            (RES_LF, RES_HF) + extras,
            extras + (RES_HF, RES_LF),
            (extras[1], RES_LF, extras[0], RES_HF),
        ]
        maps = [
            s21_power(
                TransmissionModelParams(resonator=RESONATOR, resonances=o),
                omega,
                0.1758,
            ).tobytes()
            for o in orders
        ]
        assert maps[0] == maps[1] == maps[2]

    def test_no_poles_on_dense_grid(self):
        omega = np.linspace(OMEGA_R - 20e6, OMEGA_R + 20e6, 20001)
        for b in [B_LF, B_HF, 0.1765, 0.0]:
            p = s21_power(MODEL, omega, b)
            assert np.all(np.isfinite(p))
            # denominator magnitude stays bounded away from zero
            assert p.max() < (KAPPA_C / (0.01 * KAPPA_0)) ** 2

    def test_scale_and_offset(self):
        m = TransmissionModelParams(
            resonator=RESONATOR, amplitude_scale=2.5, background_offset=0.1
        )
        assert s21_power(m, OMEGA_R, 0.0) == pytest.approx(
            2.5 * (KAPPA_C / KAPPA_0) ** 2 + 0.1, rel=1e-12
        )

    def test_gamma_zero_rejected(self):
        with pytest.raises(DegenerateLinewidth):
            SpinResonance(b_res=B_LF, gamma=0.0, g_eff=1e6)

    def test_exact_detuning_agrees_to_first_order(self):
        sp = SpinSystemParams()
        b_res = resonance_field(sp, OMEGA_R, TransitionId.LOW_FIELD)
        res = SpinResonance(
            b_res=b_res, gamma=1.38e6, g_eff=1.13e6, transition=TransitionId.LOW_FIELD
        )
        lin = TransmissionModelParams(resonator=RESONATOR, resonances=(res,))
        exact = TransmissionModelParams(
            resonator=RESONATOR,
            resonances=(res,),
            detuning="exact",
            spin_params=sp,
        )
        # identical at zero detuning
        assert s21_power(lin, OMEGA_R, b_res) == pytest.approx(
            s21_power(exact, OMEGA_R, b_res), rel=1e-12
        )
        # the linear slope g mu_B / h matches the level-splitting slope
        # to ~3e-4, so the two detunings track each other closely
        from spincavity.inout import _spin_detuning

        for db in [1e-4, 1e-3]:
            dl = _spin_detuning(lin, res, b_res + db)
            de = _spin_detuning(exact, res, b_res + db)
            assert dl == pytest.approx(de, rel=1e-3)
            pl = s21_power(lin, OMEGA_R, b_res + db)
            pe = s21_power(exact, OMEGA_R, b_res + db)
            assert pl == pytest.approx(pe, rel=0.01)

    def test_map_matches_rowwise_eval_and_workers(self):
        b = np.linspace(B_LF - 2e-3, B_HF + 2e-3, 31)
        omega = np.linspace(OMEGA_R - 6e6, OMEGA_R + 6e6, 101)
        m1 = s21_map(MODEL, b, omega, workers=1)
        m4 = s21_map(MODEL, b, omega, workers=4)
        assert m1.tobytes() == m4.tobytes()
        assert np.array_equal(m1[7], s21_power(MODEL, omega, b[7]))


class TestLorentzian:
    def test_peak_and_half_width(self):
        assert lorentzian(1e9, 1e9, 1e5, 2.0, 0.5) == pytest.approx(2.5)
        assert lorentzian(1e9 + 1e5, 1e9, 1e5, 2.0, 0.5) == pytest.approx(1.5)
        assert lorentzian(1e9 - 1e5, 1e9, 1e5, 2.0, 0.5) == pytest.approx(1.5)

    def test_rejects_nonpositive_width(self):
        with pytest.raises(DegenerateLinewidth):
            lorentzian(1e9, 1e9, 0.0, 1.0, 0.0)


class TestNormalModePeaks:
    def test_strong_coupling_splitting(self):
        g = 50 * KAPPA_0
        m = TransmissionModelParams(
            resonator=RESONATOR,
            resonances=(SpinResonance(b_res=B_LF, gamma=KAPPA_0, g_eff=g),),
        )
        peaks = normal_mode_peaks(m, B_LF)
        assert len(peaks) == 2
        assert (peaks[1] - peaks[0]) == pytest.approx(2 * g, rel=0.01)

    def test_bare_resonator_single_peak(self):
        peaks = normal_mode_peaks(BARE, 0.0)
        assert len(peaks) == 1
        assert peaks[0] == pytest.approx(OMEGA_R, abs=10.0)

    def test_reference_doublet(self):
        m = TransmissionModelParams(
            resonator=RESONATOR,
            resonances=(SpinResonance(b_res=B_HF, gamma=1.40e6, g_eff=1.07e6),),
        )
        peaks = normal_mode_peaks(m, B_HF)
        assert len(peaks) == 2
        separation = peaks[1] - peaks[0]
        assert abs(separation - 2 * 1.07e6) < 0.25 * 2 * 1.07e6

    def test_separation_monotone_in_g(self):
        gs = np.linspace(1.0e6, 3.0e6, 20)
        seps = []
        for g in gs:
            m = TransmissionModelParams(
                resonator=RESONATOR,
                resonances=(SpinResonance(b_res=B_LF, gamma=1.38e6, g_eff=g),),
            )
            peaks = normal_mode_peaks(m, B_LF)
            assert len(peaks) == 2
            seps.append(peaks[1] - peaks[0])
        assert np.all(np.diff(seps) > 0)


class TestCooperativity:
    def test_reference_values(self):
        assert cooperativity(1.13e6, 0.37e6, 1.38e6) == pytest.approx(2.50, abs=0.02)
        assert cooperativity(1.13e6, 0.37e6, 0.53e6) == pytest.approx(6.5, abs=0.1)
        assert 2.0 - 0.25 <= cooperativity(1.07e6, 0.37e6, 1.40e6) <= 2.0 + 0.25

    def test_zero_coupling(self):
        assert cooperativity(0.0, 0.37e6, 1.38e6) == 0.0

    def test_scaling_invariance(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            g, k0, gam, s = rng.uniform(0.1, 10, size=4)
            assert cooperativity(math.sqrt(s) * g, s * k0, gam) == pytest.approx(
                cooperativity(g, k0, gam), rel=1e-12
            )

    def test_zero_denominator_rejected(self):
        with pytest.raises(DegenerateLinewidth):
            cooperativity(1e6, 0.0, 1e6)


class TestLinewidthConversion:
    def test_reference_values(self):
        assert linewidth_to_gamma(37.7e-6) == pytest.approx(530e3, abs=5e3)
        assert gamma_to_linewidth(1.38e6) == pytest.approx(98.52e-6, abs=0.5e-6)
        assert gamma_to_linewidth(1.40e6) == pytest.approx(99.80e-6, abs=0.5e-6)

    def test_roundtrip_exact(self):
        rng = np.random.default_rng(9)
        for _ in range(30):
            db = 10 ** rng.uniform(-7, -3)
            assert gamma_to_linewidth(linewidth_to_gamma(db)) == pytest.approx(
                db, rel=1e-14
            )


class TestGradients:
    def test_match_finite_differences(self):
        omega = np.linspace(OMEGA_R - 5e6, OMEGA_R + 5e6, 101)
        names = ["kappa_0", "kappa_c", "omega_r", "scale", "offset",
                 "gamma_0", "g_eff_0", "gamma_1", "g_eff_1"]
        base_model = TransmissionModelParams(
            resonator=RESONATOR,
            resonances=(RES_LF, RES_HF),
            background_offset=0.5,
        )
        grads = s21_power_gradients(base_model, omega, B_LF, names)

        def rebuild(**over):
            res0 = SpinResonance(
                b_res=RES_LF.b_res,
                gamma=over.get("gamma_0", RES_LF.gamma),
                g_eff=over.get("g_eff_0", RES_LF.g_eff),
            )
            res1 = SpinResonance(
                b_res=RES_HF.b_res,
                gamma=over.get("gamma_1", RES_HF.gamma),
                g_eff=over.get("g_eff_1", RES_HF.g_eff),
            )
            r = ResonatorParams(
                omega_r=over.get("omega_r", OMEGA_R),
                kappa_0=over.get("kappa_0", KAPPA_0),
                kappa_c=over.get("kappa_c", KAPPA_C),
            )
            return TransmissionModelParams(
                resonator=r,
                resonances=(res0, res1),
                amplitude_scale=over.get("scale", 1.0),
                background_offset=over.get("offset", 0.5),
            )

        base_vals = {
            "kappa_0": KAPPA_0, "kappa_c": KAPPA_C, "omega_r": OMEGA_R,
            "scale": 1.0, "offset": 0.5,
            "gamma_0": RES_LF.gamma, "g_eff_0": RES_LF.g_eff,
            "gamma_1": RES_HF.gamma, "g_eff_1": RES_HF.g_eff,
        }
        for name in names:
            v = base_vals[name]
            # omega_r needs a relatively finer step: the line varies on
            # the kappa scale, a million times below omega_r itself.
            # gamma the opposite: its gradient is so shallow that a tiny
            # step leaves the difference roundoff-dominated.
            rel = {"omega_r": 1e-8, "gamma_0": 1e-4, "gamma_1": 1e-4}.get(name, 1e-6)
            h = rel * max(abs(v), 1.0)
            hi = s21_power(rebuild(**{name: v + h}), omega, B_LF)
            lo = s21_power(rebuild(**{name: v - h}), omega, B_LF)
            fd = (hi - lo) / (2 * h)
            scale = np.abs(fd).max() + 1e-30
            assert np.abs(grads[name] - fd).max() < 1e-6 * max(scale, 1e-12), name
