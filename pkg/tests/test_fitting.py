"""Optimizer, Jacobian, and pipeline tests.

Monte-Carlo suites use fixed seeds throughout, so every assertion here
is deterministic.
"""

import dataclasses

import numpy as np
import pytest

from spincavity.errors import DomainStep, SingularFit
from spincavity.fitting import (
    FitStatus,
    doublet_init,
    extract_kappa_vs_field,
    finite_difference_jacobian,
    fit_inout_slice,
    fit_lorentzian_slice,
    fit_temperature_series,
    levenberg_marquardt,
    ParameterSpace,
    predict_temperature_series,
    _model_set,
)
from spincavity.inout import (
    ResonatorParams,
    SpinResonance,
    TransmissionModelParams,
    lorentzian,
    s21_map,
    s21_power,
    s21_power_gradients,
)
from spincavity.spinsystem import SpinSystemParams, TransitionId
from spincavity.sweepio import FieldSweep, TemperatureSeries

B_LF = 0.17416036215779604
B_HF = 0.1783627368118323
G_FULL = 1591182.86

OMEGA = np.linspace(4.923e9, 4.939e9, 161)
TRUTH = {"center_hz": 4.9312e9, "hwhm_hz": 3.7e5,
         "amplitude": 2.4, "offset": 0.03}
CLEAN = lorentzian(OMEGA, *TRUTH.values())


def resonator():
    return ResonatorParams(omega_r=4.931e9, kappa_0=3.7e5, kappa_c=2.5176e5)


def lf_model():
    return TransmissionModelParams(
        resonator=resonator(),
        resonances=(SpinResonance(b_res=B_LF, gamma=1.38e6, g_eff=1.13e6),))


def hf_model():
    return TransmissionModelParams(
        resonator=resonator(),
        resonances=(SpinResonance(b_res=B_HF, gamma=1.40e6, g_eff=1.07e6),))


def perturbed(model, **line0):
    res = dataclasses.replace(model.resonances[0], **line0)
    return dataclasses.replace(model, resonances=(res,) + model.resonances[1:])


class TestFiniteDifferenceJacobian:
    def test_quadratic_model_exact(self):
        def fn(x):
            return np.array([x[0] ** 2 + 2 * x[1],
                             3 * x[0] * x[1],
                             x[1] ** 2 - x[0]])

        x = np.array([2.0, 3.0])
        expected = np.array([[4.0, 2.0], [9.0, 6.0], [-1.0, 6.0]])
        jac = finite_difference_jacobian(fn, x)
        assert np.max(np.abs(jac - expected)) < 1e-10 * np.max(np.abs(expected))

    def test_dual_path_agrees_with_analytic(self):
        # FD in the optimizer's internal (log) coordinates versus the
        # chain-ruled analytic gradients, column by column.
        free = ("kappa_0", "omega_r", "gamma_0", "g_eff_0", "scale", "offset")
        model = dataclasses.replace(lf_model(), amplitude_scale=1.7,
                                    background_offset=0.02)
        space = ParameterSpace(
            names=free,
            log_scale=(True, False, True, True, True, False))
        p0 = np.array([3.7e5, 4.931e9, 1.38e6, 1.13e6, 1.7, 0.02])

        def residual(q):
            p = space.to_external(q)
            return s21_power(_model_set(model, free, p), OMEGA, B_LF)

        q0 = space.to_internal(p0)
        jac_fd = finite_difference_jacobian(residual, q0, rel_step=1e-8)
        grads = s21_power_gradients(_model_set(model, free, p0),
                                    OMEGA, B_LF, free)
        jac_an = space.chain_jacobian(
            np.column_stack([grads[n] for n in free]), q0)
        for j in range(len(free)):
            col = np.linalg.norm(jac_an[:, j])
            err = np.linalg.norm(jac_fd[:, j] - jac_an[:, j])
            assert err <= 1e-6 * col, (free[j], err / col)

    def test_decoupled_parameter_column_zero(self):
        # a line 1 T away with g_eff = 0 contributes exactly nothing
        model = TransmissionModelParams(
            resonator=resonator(),
            resonances=(SpinResonance(b_res=B_LF, gamma=1.38e6, g_eff=1.13e6),
                        SpinResonance(b_res=1.2, gamma=1.0e6, g_eff=0.0)))
        grads = s21_power_gradients(model, OMEGA, B_LF,
                                    ("g_eff_0", "g_eff_1"))
        ref = np.linalg.norm(grads["g_eff_0"])
        assert np.linalg.norm(grads["g_eff_1"]) < 1e-12 * ref

    def test_far_resonance_weak_sensitivity(self):
        # with a finite g the exact model keeps ~gamma/detuning
        # sensitivity; 1 T detuning puts it below 1e-3 relative
        model = TransmissionModelParams(
            resonator=resonator(),
            resonances=(SpinResonance(b_res=B_LF, gamma=1.38e6, g_eff=1.13e6),
                        SpinResonance(b_res=1.2, gamma=1.0e6, g_eff=1.13e6)))
        grads = s21_power_gradients(model, OMEGA, B_LF,
                                    ("g_eff_0", "g_eff_1"))
        ratio = (np.linalg.norm(grads["g_eff_1"])
                 / np.linalg.norm(grads["g_eff_0"]))
        assert 0.0 < ratio < 1e-3

    def test_domain_step_shrinks_and_retries(self):
        def fn(x):
            if x[0] < 0:
                raise ValueError("out of domain")
            return np.array([np.sqrt(x[0]), x[0]])

        # first step (1e-9 floor) crosses zero, the shrunk one does not
        jac = finite_difference_jacobian(fn, np.array([5e-10]))
        assert np.isfinite(jac).all()
        assert jac[1, 0] == pytest.approx(1.0, rel=1e-6)

    def test_domain_step_raises_after_retry(self):
        def fn(x):
            if x[0] < 0:
                raise ValueError("out of domain")
            return np.array([np.sqrt(x[0]), x[0]])

        with pytest.raises(DomainStep):
            finite_difference_jacobian(fn, np.array([1e-11]))


class TestLevenbergMarquardt:
    def test_monotone_residual_history(self):
        rng = np.random.default_rng(11)
        noisy = CLEAN * (1 + 0.02 * rng.standard_normal(CLEAN.size))
        result = fit_lorentzian_slice(OMEGA, noisy)
        history = np.array(result.residual_history)
        assert history.size >= 2
        assert np.all(np.diff(history) <= 0.0)

    def test_dead_parameter_raises(self):
        def residual(x):
            return np.array([x[0] - 1.0, 2 * x[0], x[0] + 3.0])

        with pytest.raises(SingularFit):
            levenberg_marquardt(lambda x: residual(x), np.array([2.0, 5.0]))

    def test_underdetermined_raises(self):
        with pytest.raises(SingularFit):
            levenberg_marquardt(lambda x: np.array([x[0] + x[1]]),
                                np.array([1.0, 1.0]))

    def test_linear_problem_exact(self):
        a = np.array([[1.0, 2.0], [3.0, -1.0], [0.5, 0.5]])
        b = a @ np.array([2.5, -1.5])

        result = levenberg_marquardt(lambda x: a @ x - b,
                                     np.array([0.0, 0.0]))
        assert result.status is FitStatus.CONVERGED
        assert np.allclose(result.x, [2.5, -1.5], rtol=0, atol=1e-9)
        assert result.n_iter <= 5


class TestLorentzianFit:
    def test_noiseless_recovery(self):
        result = fit_lorentzian_slice(OMEGA, CLEAN)
        assert result.status is FitStatus.CONVERGED
        for name, truth in TRUTH.items():
            assert result[name] == pytest.approx(truth, rel=1e-8)
        assert np.all(result.stderr >= 0.0)

    def test_hwhm_within_three_stderr_100_seeds(self):
        hits = 0
        for seed in range(100):
            rng = np.random.default_rng(seed)
            noisy = CLEAN * (1 + 0.01 * rng.standard_normal(CLEAN.size))
            r = fit_lorentzian_slice(OMEGA, noisy)
            err = abs(r["hwhm_hz"] - TRUTH["hwhm_hz"])
            hits += err <= 3 * r.stderr_of("hwhm_hz")
        assert hits >= 95

    def test_init_override(self):
        result = fit_lorentzian_slice(
            OMEGA, CLEAN, init={"hwhm_hz": 8e5, "center_hz": 4.930e9})
        assert result["hwhm_hz"] == pytest.approx(TRUTH["hwhm_hz"], rel=1e-8)
        with pytest.raises(ValueError, match="unknown init"):
            fit_lorentzian_slice(OMEGA, CLEAN, init={"width": 1.0})

    def test_constant_data_raises(self):
        with pytest.raises(SingularFit, match="constant"):
            fit_lorentzian_slice(OMEGA, np.full(OMEGA.size, 0.3))

    def test_too_few_points_raises(self):
        with pytest.raises(ValueError, match="8 points"):
            fit_lorentzian_slice(OMEGA[:5], CLEAN[:5])


def two_line_model(extra=()):
    lines = (SpinResonance(b_res=B_LF, gamma=1.38e6, g_eff=1.13e6),
             SpinResonance(b_res=B_HF, gamma=1.40e6, g_eff=1.07e6)) + extra
    return TransmissionModelParams(resonator=resonator(), resonances=lines)


def make_sweep(model, nb=69, nw=201):
    b = np.linspace(0.172, 0.1805, nb)
    og = np.linspace(4.921e9, 4.941e9, nw)
    return FieldSweep(b_grid=b, omega_grid=og,
                      power=s21_map(model, b, og))


@pytest.fixture(scope="module")
def sweep():
    return make_sweep(two_line_model())


class TestExtractKappaVsField:
    def test_maxima_at_resonance_fields(self, sweep):
        rows = extract_kappa_vs_field(sweep)
        assert all(r.ok for r in rows)
        kappa = np.array([r.kappa_eff_hz for r in rows])
        b = sweep.b_grid
        step = b[1] - b[0]
        half = b.size // 2
        b_max_lf = b[np.argmax(kappa[:half])]
        b_max_hf = b[half + np.argmax(kappa[half:])]
        assert abs(b_max_lf - B_LF) <= step
        assert abs(b_max_hf - B_HF) <= step
        # on resonance the ensemble broadens the line well past kappa_0
        assert kappa[np.argmax(kappa[:half])] > 1.5 * 3.7e5
        # far off resonance the bare-line width comes back
        assert kappa[0] == pytest.approx(3.7e5, rel=5e-3)

    def test_zero_coupling_flat(self):
        model = two_line_model()
        model = dataclasses.replace(model, resonances=tuple(
            dataclasses.replace(r, g_eff=0.0) for r in model.resonances))
        rows = extract_kappa_vs_field(make_sweep(model, nb=21))
        for row in rows:
            assert row.kappa_eff_hz == pytest.approx(3.7e5, rel=1e-6)

    def test_extra_lines_add_maxima(self):
        extra = (SpinResonance(b_res=0.1755, gamma=8.0e6, g_eff=6.0e5),
                 SpinResonance(b_res=0.1763, gamma=1.8e6, g_eff=4.0e5))
        sweep = make_sweep(two_line_model(extra))
        rows = extract_kappa_vs_field(sweep)
        kappa = np.array([r.kappa_eff_hz for r in rows])
        b = sweep.b_grid
        step = b[1] - b[0]
        peaks = b[1:-1][(kappa[1:-1] >= kappa[:-2])
                        & (kappa[1:-1] > kappa[2:])]
        for target in (B_LF, 0.1755, 0.1763, B_HF):
            assert np.min(np.abs(peaks - target)) <= step, target

    def test_failed_rows_flagged_not_dropped(self):
        sweep = make_sweep(two_line_model(), nb=11)
        power = sweep.power.copy()
        power[4] = 0.25  # constant row: nothing to fit
        broken = FieldSweep(b_grid=sweep.b_grid, omega_grid=sweep.omega_grid,
                            power=power)
        rows = extract_kappa_vs_field(broken)
        assert len(rows) == 11
        assert rows[4].status.startswith("Failed")
        assert np.isnan(rows[4].kappa_eff_hz)
        assert all(r.ok for i, r in enumerate(rows) if i != 4)

    def test_worker_count_independence(self, sweep):
        serial = extract_kappa_vs_field(sweep, workers=1)
        threaded = extract_kappa_vs_field(sweep, workers=4)
        assert [r.as_tuple() for r in serial] == \
            [r.as_tuple() for r in threaded]


class TestInoutSliceFit:
    OG = np.linspace(4.921e9, 4.941e9, 401)

    def test_noiseless_recovery(self):
        model = lf_model()
        data = s21_power(model, self.OG, B_LF)
        start = perturbed(
            dataclasses.replace(
                model, resonator=dataclasses.replace(
                    model.resonator, kappa_0=4.4e5)),
            gamma=1.1e6, g_eff=0.9e6)
        fit = fit_inout_slice(self.OG, data, start, B_LF,
                              free=("kappa_0", "gamma_0", "g_eff_0"))
        assert fit.status is FitStatus.CONVERGED
        assert fit["kappa_0"] == pytest.approx(3.7e5, rel=1e-6)
        assert fit["gamma_0"] == pytest.approx(1.38e6, rel=1e-6)
        assert fit["g_eff_0"] == pytest.approx(1.13e6, rel=1e-6)

    def test_seeded_noise_within_5_percent(self):
        model = hf_model()
        data = s21_power(model, self.OG, B_HF)
        rng = np.random.default_rng(42)
        noisy = data * (1 + 0.01 * rng.standard_normal(data.size))
        start = perturbed(
            dataclasses.replace(
                model, resonator=dataclasses.replace(
                    model.resonator, kappa_0=3.0e5)),
            gamma=1.8e6, g_eff=0.8e6)
        fit = fit_inout_slice(self.OG, noisy, start, B_HF,
                              free=("kappa_0", "gamma_0", "g_eff_0"))
        assert fit["kappa_0"] == pytest.approx(3.7e5, rel=0.05)
        assert fit["gamma_0"] == pytest.approx(1.40e6, rel=0.05)
        assert fit["g_eff_0"] == pytest.approx(1.07e6, rel=0.05)

    def test_derived_cooperativity_and_q(self):
        model = lf_model()
        data = s21_power(model, self.OG, B_LF)
        start = perturbed(model, gamma=1.2e6, g_eff=1.0e6)
        fit = fit_inout_slice(self.OG, data, start, B_LF,
                              free=("gamma_0", "g_eff_0"))
        assert fit.derived["cooperativity_0"] == pytest.approx(2.50, abs=0.02)
        assert 6600 <= fit.derived["q_loaded"] <= 6700

    def test_high_field_cooperativity_from_noisy_fit(self):
        model = hf_model()
        data = s21_power(model, self.OG, B_HF)
        rng = np.random.default_rng(7)
        noisy = data * (1 + 0.01 * rng.standard_normal(data.size))
        start = perturbed(model, gamma=1.0e6, g_eff=0.8e6)
        fit = fit_inout_slice(self.OG, noisy, start, B_HF,
                              free=("gamma_0", "g_eff_0"))
        assert fit.derived["cooperativity_0"] == pytest.approx(2.0, abs=0.25)

    def test_zero_coupling_makes_gamma_unidentifiable(self):
        model = perturbed(lf_model(), g_eff=0.0)
        data = s21_power(model, self.OG, B_LF)
        with pytest.raises(SingularFit, match="no effect"):
            fit_inout_slice(self.OG, data, model, B_LF, free=("gamma_0",))

    def test_bad_free_names(self):
        model = lf_model()
        data = s21_power(model, self.OG, B_LF)
        with pytest.raises(ValueError, match="unknown fit parameter"):
            fit_inout_slice(self.OG, data, model, B_LF, free=("bogus",))
        with pytest.raises(ValueError, match="line 3"):
            fit_inout_slice(self.OG, data, model, B_LF, free=("gamma_3",))
        with pytest.raises(ValueError, match="at least one"):
            fit_inout_slice(self.OG, data, model, B_LF, free=())

    def test_doublet_init_heuristic(self):
        # deep strong coupling: normal modes sit near omega_r +- g
        model = perturbed(lf_model(), gamma=1.0e5, g_eff=2.0e6)
        data = s21_power(model, self.OG, B_LF)
        center, half_sep = doublet_init(self.OG, data)
        grid_step = self.OG[1] - self.OG[0]
        assert abs(center - 4.931e9) <= grid_step
        assert half_sep == pytest.approx(2.0e6, rel=0.05)

    def test_single_peak_doublet_fallback(self):
        center, half_sep = doublet_init(OMEGA, CLEAN)
        assert half_sep is None
        assert abs(center - TRUTH["center_hz"]) <= OMEGA[1] - OMEGA[0]


class TestTemperatureSeriesFit:
    PARAMS = SpinSystemParams()
    TEMPS = np.geomspace(0.05, 3.5, 24)
    FIELDS = {TransitionId.LOW_FIELD: B_LF, TransitionId.HIGH_FIELD: B_HF}

    def synth(self, g_lf=G_FULL, g_hf=G_FULL):
        amps = {TransitionId.LOW_FIELD: g_lf, TransitionId.HIGH_FIELD: g_hf}
        return {
            t: (self.TEMPS,
                predict_temperature_series(amps[t], self.PARAMS,
                                           self.FIELDS[t], self.TEMPS, t))
            for t in self.FIELDS}

    def test_shared_amplitude_recovery(self):
        fit = fit_temperature_series(self.synth(), self.PARAMS,
                                     b_z=self.FIELDS)
        assert fit.names == ("g_full_hz",)
        assert fit["g_full_hz"] == pytest.approx(G_FULL, rel=1e-8)
        assert fit.status is FitStatus.CONVERGED

    def test_per_transition_amplitudes(self):
        fit = fit_temperature_series(self.synth(g_hf=0.95 * G_FULL),
                                     self.PARAMS, b_z=self.FIELDS,
                                     shared_amplitude=False)
        assert fit.names == ("g_full_HF_hz", "g_full_LF_hz")
        assert fit["g_full_LF_hz"] == pytest.approx(G_FULL, rel=1e-8)
        assert fit["g_full_HF_hz"] == pytest.approx(0.95 * G_FULL, rel=1e-8)

    def test_fields_from_series_object(self):
        data = self.synth()
        series = TemperatureSeries(
            temperatures={t: data[t][0] for t in data},
            couplings={t: data[t][1] for t in data},
            resonance_fields=dict(self.FIELDS))
        fit = fit_temperature_series(series, self.PARAMS)
        assert fit["g_full_hz"] == pytest.approx(G_FULL, rel=1e-8)

    def test_noisy_amplitude_recovery(self):
        rng = np.random.default_rng(5)
        data = {t: (temps, g * (1 + 0.01 * rng.standard_normal(g.size)))
                for t, (temps, g) in self.synth().items()}
        fit = fit_temperature_series(data, self.PARAMS, b_z=self.FIELDS)
        assert fit["g_full_hz"] == pytest.approx(G_FULL, rel=0.02)

    def test_too_few_points_raises(self):
        short = {TransitionId.LOW_FIELD:
                 (np.array([0.1, 1.0]), np.array([1e6, 5e5]))}
        with pytest.raises(SingularFit, match="at least 3"):
            fit_temperature_series(short, self.PARAMS, b_z=B_LF)

    def test_curves_separate_cold_coincide_hot(self):
        cold = np.geomspace(0.01, 0.1, 8)
        hot = np.geomspace(1.0, 3.5, 8)
        lf_cold = predict_temperature_series(
            G_FULL, self.PARAMS, B_LF, cold, TransitionId.LOW_FIELD)
        hf_cold = predict_temperature_series(
            G_FULL, self.PARAMS, B_HF, cold, TransitionId.HIGH_FIELD)
        assert np.all(lf_cold > hf_cold)
        lf_hot = predict_temperature_series(
            G_FULL, self.PARAMS, B_LF, hot, TransitionId.LOW_FIELD)
        hf_hot = predict_temperature_series(
            G_FULL, self.PARAMS, B_HF, hot, TransitionId.HIGH_FIELD)
        assert np.max(np.abs(lf_hot / hf_hot - 1.0)) < 1e-3

    def test_high_temperature_tail_slope(self):
        temps = np.geomspace(0.5, 3.5, 9)
        curve = predict_temperature_series(
            G_FULL, self.PARAMS, B_LF, temps, TransitionId.LOW_FIELD)
        slope = np.polyfit(np.log(temps), np.log(curve), 1)[0]
        assert slope == pytest.approx(-0.5, abs=0.025)


class TestStatisticalProperties:
    def test_roundtrip_200_draws(self):
        # documented box: center within the grid, hwhm 100 kHz..1.5 MHz,
        # amplitude 0.1..10, offset 0..0.5
        rng = np.random.default_rng(20260821)
        for _ in range(200):
            center = 4.931e9 + rng.uniform(-2e6, 2e6)
            hwhm = float(np.exp(rng.uniform(np.log(1e5), np.log(1.5e6))))
            amplitude = float(np.exp(rng.uniform(np.log(0.1), np.log(10.0))))
            offset = rng.uniform(0.0, 0.5)
            data = lorentzian(OMEGA, center, hwhm, amplitude, offset)
            fit = fit_lorentzian_slice(OMEGA, data)
            assert fit.residual_norm < 1e-10
            assert fit["center_hz"] == pytest.approx(center, rel=1e-6)
            assert fit["hwhm_hz"] == pytest.approx(hwhm, rel=1e-6)
            assert fit["amplitude"] == pytest.approx(amplitude, rel=1e-6)
            # offset may be arbitrarily close to zero; measure its error
            # against unit scale instead of dividing by it
            assert abs(fit["offset"] - offset) < 1e-6 * max(amplitude, 1.0)

    def test_ci_coverage_lorentzian(self):
        z95 = 1.959964
        cover = {name: 0 for name in TRUTH}
        for seed in range(200):
            rng = np.random.default_rng(1000 + seed)
            noisy = CLEAN * (1 + 0.01 * rng.standard_normal(CLEAN.size))
            fit = fit_lorentzian_slice(OMEGA, noisy)
            for name, truth in TRUTH.items():
                if abs(fit[name] - truth) <= z95 * fit.stderr_of(name):
                    cover[name] += 1
        for name, hits in cover.items():
            assert hits >= 180, (name, hits)

    def test_ci_coverage_inout(self):
        z95 = 1.959964
        og = np.linspace(4.921e9, 4.941e9, 401)
        model = hf_model()
        data = s21_power(model, og, B_HF)
        start = perturbed(
            dataclasses.replace(
                model, resonator=dataclasses.replace(
                    model.resonator, kappa_0=3.0e5)),
            gamma=1.8e6, g_eff=0.8e6)
        truths = {"kappa_0": 3.7e5, "gamma_0": 1.40e6, "g_eff_0": 1.07e6}
        cover = {name: 0 for name in truths}
        within5 = 0
        for seed in range(200):
            rng = np.random.default_rng(3000 + seed)
            noisy = data * (1 + 0.01 * rng.standard_normal(data.size))
            fit = fit_inout_slice(og, noisy, start, B_HF, free=tuple(truths))
            within5 += all(abs(fit[n] / t - 1) < 0.05
                           for n, t in truths.items())
            for name, truth in truths.items():
                if abs(fit[name] - truth) <= z95 * fit.stderr_of(name):
                    cover[name] += 1
        assert within5 >= 190
        for name, hits in cover.items():
            assert hits >= 180, (name, hits)
