"""Damped least-squares engine and the three analysis pipelines.

The optimizer is a plain Levenberg-Marquardt loop on the normal
equations with multiplicative damping: solve
(JtJ + lambda diag(JtJ)) delta = -Jt r, divide lambda by 8 on accepted
steps, multiply by 8 on rejections, and never accept a step that raises
the residual norm.  Iteration stops when the relative residual change
or the relative step size falls below 1e-10, or after 200 iterations.

Strictly positive parameters (rates, widths, amplitudes) are fitted as
logarithms, which enforces positivity without constraint machinery;
standard errors are mapped back with the delta method.  Error bars are
the heteroscedasticity-robust linearized covariance
(JtJ)^-1 Jt diag(r_i^2/(1-h_i)^2) J (JtJ)^-1 (h_i = leverage), which
stays calibrated for both additive and signal-proportional noise; the
plain sigma^2 (JtJ)^-1 estimate undercovers several-fold when the
noise scales with the signal, as it does for amplitude noise on a
peaked spectrum.

Pipelines: per-field Lorentzian extraction of the effective resonator
linewidth, multi-line transmission-model fits of single-field slices,
and shared-amplitude fits of coupling-versus-temperature series.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .errors import DomainStep, SingularFit, SpinCavityError
from .inout import (cooperativity, lorentzian, q_factors, s21_power,
                    s21_power_gradients)
from .spinsystem import TransitionId, transition_polarization

MAX_ITER = 200
REL_TOL = 1e-10
_DAMPING_INIT = 1e-3
_DAMPING_STEP = 8.0
_DAMPING_CEILING = 1e14

FD_REL_STEP = 1e-6
FD_ABS_FLOOR = 1e-9


class FitStatus(Enum):
    CONVERGED = "Converged"
    MAX_ITER = "MaxIter"
    SINGULAR = "Singular"


@dataclass(frozen=True, eq=False)
class FitResult:
    """Solution of one least-squares problem, in external units."""

    names: tuple
    values: np.ndarray
    stderr: np.ndarray
    residual_norm: float
    status: FitStatus
    n_iter: int
    covariance: np.ndarray = None
    derived: dict = field(default_factory=dict)
    residual_history: tuple = ()

    def __getitem__(self, name):
        return float(self.values[self.names.index(name)])

    def stderr_of(self, name):
        return float(self.stderr[self.names.index(name)])

    def as_dict(self):
        return {n: float(v) for n, v in zip(self.names, self.values)}


def finite_difference_jacobian(fn, x, rel_step=FD_REL_STEP,
                               abs_floor=FD_ABS_FLOOR):
    """Central-difference Jacobian of a vector-valued function.

    Per-parameter step h_j = max(rel_step * |x_j|, abs_floor).  If an
    evaluation leaves the model's valid domain (raises ValueError or a
    package error), the step is shrunk tenfold and retried once;
    a second failure raises DomainStep.
    """
    x = np.asarray(x, dtype=float)
    r0 = np.asarray(fn(x), dtype=float)
    jac = np.empty((r0.size, x.size))
    for j in range(x.size):
        h = max(rel_step * abs(x[j]), abs_floor)
        for attempt in (0, 1):
            hi = x.copy()
            lo = x.copy()
            hi[j] += h
            lo[j] -= h
            try:
                f_hi = np.asarray(fn(hi), dtype=float)
                f_lo = np.asarray(fn(lo), dtype=float)
            except (ValueError, SpinCavityError) as exc:
                if attempt:
                    raise DomainStep(
                        f"parameter {j} cannot be stepped by {h:.3e} "
                        "in either direction") from exc
                h /= 10.0
                continue
            jac[:, j] = (f_hi - f_lo) / (2.0 * h)
            break
    return jac


@dataclass(frozen=True, eq=False)
class _LMResult:
    x: np.ndarray
    covariance: np.ndarray
    status: FitStatus
    n_iter: int
    residual_norm: float
    history: tuple


def _solve_damped(jtj, jtr, damping):
    scale = np.diag(jtj).copy()
    scale[scale == 0.0] = 1.0
    return np.linalg.solve(jtj + damping * np.diag(scale), -jtr)


def levenberg_marquardt(residual, x0, jacobian=None, max_iter=MAX_ITER,
                        tol=REL_TOL):
    """Minimize ||residual(x)||^2; returns internal-space solution.

    jacobian(x) -> (m, n); finite differences when omitted.  The loop
    is monotone: a step is taken only if it lowers the residual norm.
    Converged when the residual drop falls below tol relative to the
    residual itself, or when no damping level yields an improving step.
    """
    if jacobian is None:
        jacobian = lambda x: finite_difference_jacobian(residual, x)
    x = np.asarray(x0, dtype=float).copy()
    r = np.asarray(residual(x), dtype=float)
    if r.size <= x.size:
        raise SingularFit(
            f"{r.size} residuals cannot determine {x.size} parameters")
    norm = float(np.linalg.norm(r))
    history = [norm]
    damping = _DAMPING_INIT
    status = FitStatus.MAX_ITER
    n_iter = 0

    jac = jacobian(x)
    jtj = jac.T @ jac
    diag = np.diag(jtj)
    if np.any(diag == 0.0) or not np.all(np.isfinite(jtj)):
        dead = [i for i, d in enumerate(diag) if d == 0.0]
        raise SingularFit(
            f"parameters {dead} have no effect on the model; "
            "freeze them or adjust the data window")

    for n_iter in range(1, max_iter + 1):
        jtr = jac.T @ r
        accepted = False
        while damping < _DAMPING_CEILING:
            try:
                step = _solve_damped(jtj, jtr, damping)
            except np.linalg.LinAlgError:
                damping *= _DAMPING_STEP
                continue
            if not np.all(np.isfinite(step)):
                damping *= _DAMPING_STEP
                continue
            try:
                r_new = np.asarray(residual(x + step), dtype=float)
            except (ValueError, SpinCavityError):
                damping *= _DAMPING_STEP
                continue
            norm_new = float(np.linalg.norm(r_new))
            if norm_new <= norm:
                accepted = True
                break
            damping *= _DAMPING_STEP
        if not accepted:
            # Even heavily damped (near gradient-descent, tiny) steps do
            # not lower the residual: stationary to machine precision.
            status = FitStatus.CONVERGED
            break

        drop = norm - norm_new
        x = x + step
        r = r_new
        norm = norm_new
        history.append(norm)
        damping = max(damping / _DAMPING_STEP, 1e-14)
        if norm == 0.0 or drop <= tol * max(norm, 1e-300):
            status = FitStatus.CONVERGED
            break
        jac = jacobian(x)
        jtj = jac.T @ jac

    jac = jacobian(x)
    try:
        covariance = _robust_covariance(jac, r)
    except np.linalg.LinAlgError:
        covariance = np.full((x.size, x.size), np.inf)
        if status is FitStatus.CONVERGED:
            status = FitStatus.SINGULAR
    return _LMResult(x=x, covariance=covariance, status=status,
                     n_iter=n_iter, residual_norm=norm,
                     history=tuple(history))


def _robust_covariance(jac, r):
    """Sandwich estimate with leverage correction (the HC3 form)."""
    jtj_inv = np.linalg.inv(jac.T @ jac)
    leverage = np.einsum("ij,jk,ik->i", jac, jtj_inv, jac)
    weights = (r / np.clip(1.0 - leverage, 1e-6, None)) ** 2
    return jtj_inv @ (jac.T * weights) @ jac @ jtj_inv


@dataclass(frozen=True)
class ParameterSpace:
    """Names plus which parameters live in log space internally."""

    names: tuple
    log_scale: tuple

    def to_internal(self, values):
        q = np.array([math.log(v) if is_log else float(v)
                      for v, is_log in zip(values, self.log_scale)])
        return q

    def to_external(self, q):
        return np.array([math.exp(v) if is_log else float(v)
                         for v, is_log in zip(q, self.log_scale)])

    def stderr_external(self, q, q_stderr):
        p = self.to_external(q)
        return np.array([e * abs(v) if is_log else e
                         for e, v, is_log
                         in zip(q_stderr, p, self.log_scale)])

    def chain_jacobian(self, jac_p, q):
        """External-space Jacobian -> internal: dp/dq = p for logs."""
        p = self.to_external(q)
        factors = np.where(self.log_scale, p, 1.0)
        return jac_p * factors[None, :]


def _run_fit(residual_p, p0, space, jacobian_p=None, derived=None):
    """Drive LM in internal space; package a FitResult in external."""
    def residual_q(q):
        return residual_p(space.to_external(q))

    jacobian_q = None
    if jacobian_p is not None:
        def jacobian_q(q):
            return space.chain_jacobian(jacobian_p(space.to_external(q)), q)

    lm = levenberg_marquardt(residual_q, space.to_internal(p0),
                             jacobian=jacobian_q)
    q_stderr = np.sqrt(np.abs(np.diag(lm.covariance)))
    values = space.to_external(lm.x)
    result = FitResult(
        names=space.names,
        values=values,
        stderr=space.stderr_external(lm.x, q_stderr),
        residual_norm=lm.residual_norm,
        status=lm.status,
        n_iter=lm.n_iter,
        covariance=lm.covariance,
        residual_history=lm.history,
    )
    if derived is not None:
        result.derived.update(derived(result))
    return result


# --- Lorentzian linewidth extraction --------------------------------------

_LORENTZIAN_SPACE = ParameterSpace(
    names=("center_hz", "hwhm_hz", "amplitude", "offset"),
    log_scale=(False, True, True, False))


def _half_max_crossing(omega, power, i_peak, threshold, direction):
    i = i_peak
    while 0 <= i + direction < omega.size:
        j = i + direction
        if power[j] < threshold:
            # linear interpolation between the straddling samples
            frac = (power[i] - threshold) / (power[i] - power[j])
            return omega[i] + frac * (omega[j] - omega[i])
        i = j
    return None


def lorentzian_init(omega, power):
    """Self-initialization from peak, half-max crossings, and extrema."""
    offset = float(np.min(power))
    amplitude = float(np.max(power) - offset)
    i_peak = int(np.argmax(power))
    center = float(omega[i_peak])
    threshold = offset + 0.5 * amplitude
    left = _half_max_crossing(omega, power, i_peak, threshold, -1)
    right = _half_max_crossing(omega, power, i_peak, threshold, +1)
    if left is not None and right is not None:
        hwhm = 0.5 * (right - left)
    elif left is not None:
        hwhm = center - left
    elif right is not None:
        hwhm = right - center
    else:
        hwhm = (omega[-1] - omega[0]) / 8.0
    hwhm = max(float(hwhm), (omega[1] - omega[0]) / 2.0)
    return center, hwhm, amplitude, offset


def _lorentzian_jacobian(omega):
    def jac(p):
        center, hwhm, amplitude, offset = p
        d = omega - center
        denom = d * d + hwhm * hwhm
        w2 = hwhm * hwhm
        out = np.empty((omega.size, 4))
        out[:, 0] = amplitude * w2 * 2.0 * d / denom ** 2
        out[:, 1] = amplitude * 2.0 * hwhm * d * d / denom ** 2
        out[:, 2] = w2 / denom
        out[:, 3] = 1.0
        return out
    return jac


def fit_lorentzian_slice(omega, power, init=None):
    """Fit center, half width, amplitude, offset to one spectrum.

    init, when given, is a mapping overriding any of the
    self-initialized parameters by name.  Raises SingularFit for
    constant data; needs at least 8 points.
    """
    omega = np.asarray(omega, dtype=float)
    power = np.asarray(power, dtype=float)
    if omega.size < 8:
        raise ValueError("need at least 8 points to fit a line shape")
    if np.ptp(power) == 0.0:
        raise SingularFit("spectrum is constant; no line to fit")

    center, hwhm, amplitude, offset = lorentzian_init(omega, power)
    if init:
        overrides = dict(init)
        center = overrides.pop("center_hz", center)
        hwhm = overrides.pop("hwhm_hz", hwhm)
        amplitude = overrides.pop("amplitude", amplitude)
        offset = overrides.pop("offset", offset)
        if overrides:
            raise ValueError(f"unknown init keys: {sorted(overrides)}")
    if amplitude <= 0:
        amplitude = max(float(np.ptp(power)), 1e-12)

    def residual(p):
        return lorentzian(omega, *p) - power

    return _run_fit(residual, (center, hwhm, amplitude, offset),
                    _LORENTZIAN_SPACE, jacobian_p=_lorentzian_jacobian(omega))


@dataclass(frozen=True)
class KappaRow:
    """One field point of the effective-linewidth table."""

    b_tesla: float
    kappa_eff_hz: float
    stderr_hz: float
    status: str

    @property
    def ok(self):
        return self.status == FitStatus.CONVERGED.value

    def as_tuple(self):
        return (self.b_tesla, self.kappa_eff_hz, self.stderr_hz,
                self.status)


def _kappa_row(b0, omega, spectrum):
    try:
        res = fit_lorentzian_slice(omega, spectrum)
    except (SingularFit, ValueError) as exc:
        return KappaRow(b_tesla=float(b0), kappa_eff_hz=math.nan,
                        stderr_hz=math.nan,
                        status=f"Failed: {exc}")
    return KappaRow(b_tesla=float(b0),
                    kappa_eff_hz=res["hwhm_hz"],
                    stderr_hz=res.stderr_of("hwhm_hz"),
                    status=res.status.value)


def extract_kappa_vs_field(sweep, workers=1):
    """Per-field Lorentzian linewidths for a whole sweep.

    Rows whose fit fails are flagged in their status column rather than
    dropped.  Rows are independent; with workers > 1 they are fitted in
    a thread pool and reassembled in field order, so the result does
    not depend on scheduling.
    """
    omega = sweep.omega_grid
    rows = [None] * sweep.b_grid.size
    if workers > 1:
        def run(i):
            rows[i] = _kappa_row(sweep.b_grid[i], omega, sweep.power[i])
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, range(sweep.b_grid.size)))
    else:
        for i in range(sweep.b_grid.size):
            rows[i] = _kappa_row(sweep.b_grid[i], omega, sweep.power[i])
    return rows


# --- transmission-model slice fits ----------------------------------------

_MODEL_LOG_PARAMS = ("kappa_0", "kappa_c", "scale")


def _is_log_param(name):
    return (name in _MODEL_LOG_PARAMS or name.startswith("gamma_")
            or name.startswith("g_eff_"))


def _split_line_param(model, name):
    kind, _, idx = name.rpartition("_")
    if kind not in ("gamma", "g_eff") or not idx.isdigit():
        raise ValueError(f"unknown fit parameter {name!r}")
    i = int(idx)
    if i >= len(model.resonances):
        raise ValueError(
            f"{name!r} refers to line {i} but the model has "
            f"{len(model.resonances)}")
    return kind, i


def _model_get(model, name):
    if name in ("kappa_0", "kappa_c", "omega_r"):
        return getattr(model.resonator, name)
    if name == "scale":
        return model.amplitude_scale
    if name == "offset":
        return model.background_offset
    kind, i = _split_line_param(model, name)
    return getattr(model.resonances[i], kind)


def _model_set(model, names, values):
    resonator = model.resonator
    res = list(model.resonances)
    scale = model.amplitude_scale
    offset = model.background_offset
    for name, value in zip(names, values):
        value = float(value)
        if name in ("kappa_0", "kappa_c", "omega_r"):
            resonator = replace(resonator, **{name: value})
        elif name == "scale":
            scale = value
        elif name == "offset":
            offset = value
        else:
            kind, i = _split_line_param(model, name)
            res[i] = replace(res[i], **{kind: value})
    return replace(model, resonator=resonator, resonances=tuple(res),
                   amplitude_scale=scale, background_offset=offset)


def doublet_init(omega, power):
    """Two-peak heuristic: (midpoint, half separation) of the two
    highest interior maxima; falls back to (peak, None) for a single
    peak."""
    power = np.asarray(power, dtype=float)
    omega = np.asarray(omega, dtype=float)
    interior = (power[1:-1] >= power[:-2]) & (power[1:-1] > power[2:])
    idx = np.flatnonzero(interior) + 1
    if idx.size < 2:
        return float(omega[np.argmax(power)]), None
    top = idx[np.argsort(power[idx])[-2:]]
    lo, hi = sorted(omega[top])
    return 0.5 * (lo + hi), 0.5 * (hi - lo)


def fit_inout_slice(omega, power, model_init, b0, free,
                    use_analytic_jacobian=True):
    """Fit a fixed-field spectrum with the multi-line cavity model.

    model_init provides both the structure (how many lines, frozen
    values) and the starting point; `free` names the parameters to
    vary, e.g. ("kappa_0", "gamma_0", "g_eff_0", "scale").  The
    coupling rate kappa_c and the amplitude scale are degenerate up to
    normalization, so fits usually freeze one of them.

    Derived cooperativities and quality factors for the fitted model
    are attached to the result.
    """
    omega = np.asarray(omega, dtype=float)
    power = np.asarray(power, dtype=float)
    free = tuple(free)
    if not free:
        raise ValueError("free must name at least one parameter")
    for name in free:
        _model_get(model_init, name)  # validates the name early

    space = ParameterSpace(
        names=free,
        log_scale=tuple(_is_log_param(n) for n in free))
    p0 = [_model_get(model_init, n) for n in free]

    def residual(p):
        return s21_power(_model_set(model_init, free, p), omega, b0) - power

    jacobian = None
    if use_analytic_jacobian:
        def jacobian(p):
            model = _model_set(model_init, free, p)
            grads = s21_power_gradients(model, omega, b0, free)
            return np.column_stack([grads[n] for n in free])

    def derived(result):
        model = _model_set(model_init, free, result.values)
        out = {}
        kappa_0 = model.resonator.kappa_0
        for i, res in enumerate(model.resonances):
            if res.g_eff > 0:
                out[f"cooperativity_{i}"] = cooperativity(
                    res.g_eff, kappa_0, res.gamma)
        q = q_factors(model.resonator)
        out["q_loaded"] = q.loaded
        out["q_external"] = q.external
        out["q_internal"] = q.internal
        return out

    return _run_fit(residual, p0, space, jacobian_p=jacobian,
                    derived=derived)


# --- temperature-series fits ----------------------------------------------

def _series_dict(series):
    if hasattr(series, "temperatures") and hasattr(series, "couplings"):
        return {t: (np.asarray(series.temperatures[t], dtype=float),
                    np.asarray(series.couplings[t], dtype=float))
                for t in series.temperatures}
    return {t: (np.asarray(temps, dtype=float),
                np.asarray(g, dtype=float))
            for t, (temps, g) in series.items()}


def _series_fields(series, b_z):
    if b_z is None:
        fields = getattr(series, "resonance_fields", None)
        if not fields:
            raise ValueError(
                "b_z not given and the series carries no resonance fields")
        return dict(fields)
    if isinstance(b_z, dict):
        return dict(b_z)
    return None  # scalar: same field for every transition


def fit_temperature_series(series, params, b_z=None, shared_amplitude=True):
    """Fit fully polarized amplitude(s) to g_eff(T) samples.

    series: TemperatureSeries or {TransitionId: (temps, couplings)}.
    b_z: scalar field, {TransitionId: field}, or None to use the
    resonance fields stored on the series.  The model per transition is
    g(T) = g_full * sqrt(P(T, b)); with shared_amplitude one g_full is
    fitted jointly, otherwise one per transition.
    """
    data = _series_dict(series)
    if not data:
        raise ValueError("series is empty")
    fields = _series_fields(series, b_z)
    order = sorted(data, key=lambda t: t.value)
    for t in order:
        temps, g = data[t]
        if temps.size < 3:
            raise SingularFit(
                f"transition {t.value} has {temps.size} points; "
                "need at least 3")

    sqrt_p = {}
    for t in order:
        temps, _ = data[t]
        b = fields[t] if fields is not None else float(b_z)
        sqrt_p[t] = np.array([
            math.sqrt(transition_polarization(params, b, temp, t))
            for temp in temps])

    y = np.concatenate([data[t][1] for t in order])
    blocks = [sqrt_p[t] for t in order]

    if shared_amplitude:
        names = ("g_full_hz",)
        x_all = np.concatenate(blocks)

        def residual(p):
            return p[0] * x_all - y

        def jacobian(p):
            return x_all[:, None]

        init = float(np.sum(x_all * y) / np.sum(x_all * x_all))
        p0 = [max(init, 1.0)]
    else:
        names = tuple(f"g_full_{t.value}_hz" for t in order)

        def residual(p):
            return np.concatenate(
                [p[i] * blocks[i] for i in range(len(order))]) - y

        def jacobian(p):
            total = sum(b.size for b in blocks)
            out = np.zeros((total, len(order)))
            pos = 0
            for i, b in enumerate(blocks):
                out[pos:pos + b.size, i] = b
                pos += b.size
            return out

        p0 = []
        for i, t in enumerate(order):
            xi = blocks[i]
            yi = data[t][1]
            p0.append(max(float(np.sum(xi * yi) / np.sum(xi * xi)), 1.0))

    space = ParameterSpace(names=names,
                           log_scale=tuple(True for _ in names))
    return _run_fit(residual, p0, space, jacobian_p=jacobian)


def predict_temperature_series(g_full, params, b_z, temperatures,
                               transition):
    """Model curve g(T) for one transition at one field."""
    return np.array([
        g_full * math.sqrt(
            transition_polarization(params, b_z, t, transition))
        for t in np.asarray(temperatures, dtype=float)])
