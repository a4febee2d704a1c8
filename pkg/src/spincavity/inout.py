"""Input-output transmission model of the coupled spin-resonator system.

The transmitted power through the resonator is

    |S21|^2 = scale * | kappa_c / D |^2 + offset
    D = i (omega - omega_r) - kappa_0
        + sum_n g_n^2 / (i (omega - omega_r - delta_n(B0)) - gamma_n)

with the spin detuning delta_n(B0) = g mu_B (B0 - B_res,n) / h.  All
rates (kappa_0, kappa_c, gamma, g) are ordinary frequencies in Hz and
half widths at half maximum; the single angular-frequency conversion
lives in the coupling module.  The probe-frequency dependence of the
spin term is kept (it produces the resolved normal-mode doublet on
resonance) and reduces to the omega = omega_r form off the peak.
"""

import math
from dataclasses import dataclass

import numpy as np

from .constants import BOHR_MAGNETON, PLANCK
from .errors import DegenerateLinewidth
from .spinsystem import SpinSystemParams, transition_frequency

_DEFAULT_G_FACTOR = 1.9985


@dataclass(frozen=True)
class ResonatorParams:
    """Bare resonator: frequency and loss rates, all in Hz (HWHM).

    kappa_0 is the total loss rate, kappa_c the external coupling
    contribution; kappa_0 - kappa_c >= 0 is the internal loss.
    """

    omega_r: float
    kappa_0: float
    kappa_c: float

    def __post_init__(self):
        if self.omega_r <= 0:
            raise ValueError("omega_r must be positive")
        if self.kappa_0 <= 0:
            raise DegenerateLinewidth("kappa_0 must be positive")
        if not 0 < self.kappa_c <= self.kappa_0:
            raise ValueError("require 0 < kappa_c <= kappa_0")

    @property
    def kappa_int(self):
        return self.kappa_0 - self.kappa_c


@dataclass(frozen=True)
class QFactors:
    """Loaded, external, and internal quality factors.

    ``internal`` is inf when the resonator is purely externally loaded
    (kappa_c = kappa_0); the harmonic identity 1/loaded = 1/external +
    1/internal still holds with 1/inf = 0.
    """

    loaded: float
    external: float
    internal: float

    @property
    def overcoupled_limit(self):
        return math.isinf(self.internal)


def q_factors(resonator):
    """Quality factors of a resonator, Q = omega_r / (2 kappa)."""
    r = resonator
    internal = math.inf if r.kappa_int == 0 else r.omega_r / (2 * r.kappa_int)
    return QFactors(
        loaded=r.omega_r / (2 * r.kappa_0),
        external=r.omega_r / (2 * r.kappa_c),
        internal=internal,
    )


@dataclass(frozen=True)
class SpinResonance:
    """One ESR transition coupled to the cavity.

    Parameters
    ----------
    b_res : float
        Resonance field in Tesla at which the transition crosses the
        resonator frequency.
    gamma : float
        Ensemble HWHM loss rate in Hz.
    g_eff : float
        Collective coupling rate in Hz.
    g_factor : float
        Spin g-factor converting field detuning to frequency detuning.
    transition : TransitionId or None
        Optional tag enabling the exact (nonlinear-in-field) detuning
        path of TransmissionModelParams.
    """

    b_res: float
    gamma: float
    g_eff: float
    g_factor: float = _DEFAULT_G_FACTOR
    transition: object = None

    def __post_init__(self):
        if self.gamma <= 0:
            raise DegenerateLinewidth("gamma must be positive")
        if self.g_eff < 0:
            raise ValueError("g_eff must be non-negative")


@dataclass(frozen=True)
class TransmissionModelParams:
    """Full forward model: resonator, spin resonances, scale and offset.

    ``detuning`` selects how the field detuning enters the spin term:
    "linear" uses g mu_B (B0 - b_res) / h; "exact" evaluates the level
    splitting difference transition_frequency(B0) - transition_frequency
    (b_res) and requires ``spin_params`` plus a transition tag on every
    resonance.  The two agree to first order in B0 - b_res.
    """

    resonator: ResonatorParams
    resonances: tuple = ()
    amplitude_scale: float = 1.0
    background_offset: float = 0.0
    detuning: str = "linear"
    spin_params: SpinSystemParams = None

    def __post_init__(self):
        object.__setattr__(self, "resonances", tuple(self.resonances))
        if self.amplitude_scale <= 0:
            raise ValueError("amplitude_scale must be positive")
        if self.background_offset < 0:
            raise ValueError("background_offset must be non-negative")
        if self.detuning not in ("linear", "exact"):
            raise ValueError("detuning must be 'linear' or 'exact'")
        if self.detuning == "exact":
            if self.spin_params is None:
                raise ValueError("exact detuning requires spin_params")
            if any(r.transition is None for r in self.resonances):
                raise ValueError("exact detuning requires transition tags")


def _canonical_order(resonances):
    # fixed summation order makes the spin sum independent of how the
    # caller ordered the list, bit for bit
    return sorted(resonances, key=lambda r: (r.b_res, r.gamma, r.g_eff))


def _spin_detuning(model, res, b0):
    if model.detuning == "exact":
        f = transition_frequency
        return f(model.spin_params, b0, res.transition) - f(
            model.spin_params, res.b_res, res.transition
        )
    return res.g_factor * BOHR_MAGNETON * (b0 - res.b_res) / PLANCK


def _s21_denominator(model, omega, b0):
    r = model.resonator
    delta_r = omega - r.omega_r
    acc = np.zeros(np.broadcast(omega, b0).shape, dtype=complex)
    comp = np.zeros_like(acc)
    for res in _canonical_order(model.resonances):
        if res.gamma <= 0:
            raise DegenerateLinewidth("gamma must be positive")
        delta_s = _spin_detuning(model, res, b0)
        term = res.g_eff**2 / (1j * (delta_r - delta_s) - res.gamma)
        # elementwise Kahan compensation keeps the sum deterministic
        y = term - comp
        t = acc + y
        comp = (t - acc) - y
        acc = t
    return 1j * delta_r - r.kappa_0 + acc


def s21_power(model, omega, b0):
    """Transmitted power |S21|^2 on a broadcast (omega, b0) grid.

    Parameters
    ----------
    model : TransmissionModelParams
    omega : float or array
        Probe frequency in Hz (ordinary frequency).
    b0 : float or array
        Static field in Tesla; broadcast against omega.

    Returns
    -------
    float or ndarray
        Linear power, amplitude_scale * |kappa_c / D|^2 + offset.
    """
    omega = np.asarray(omega, dtype=float)
    b0 = np.asarray(b0, dtype=float)
    den = _s21_denominator(model, omega, b0)
    out = (
        model.amplitude_scale
        * np.abs(model.resonator.kappa_c / den) ** 2
        + model.background_offset
    )
    return out if out.ndim else float(out)


def s21_map(model, b_grid, omega_grid, workers=1):
    """|S21|^2 on the outer grid b_grid x omega_grid.

    Rows (fixed b0) are independent; with workers > 1 they are computed
    in a thread pool and written back by row index, so the output is
    identical for any worker count.
    """
    b_grid = np.asarray(b_grid, dtype=float)
    omega_grid = np.asarray(omega_grid, dtype=float)
    out = np.empty((b_grid.size, omega_grid.size))

    def one_row(i):
        out[i, :] = s21_power(model, omega_grid, b_grid[i])

    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(one_row, range(b_grid.size)))
    else:
        for i in range(b_grid.size):
            one_row(i)
    return out


def lorentzian(omega, center, hwhm, amplitude, offset):
    """Lorentzian line, peak amplitude + offset at center, HWHM width."""
    if hwhm <= 0:
        raise DegenerateLinewidth("hwhm must be positive")
    omega = np.asarray(omega, dtype=float)
    out = amplitude * hwhm**2 / ((omega - center) ** 2 + hwhm**2) + offset
    return out if out.ndim else float(out)


def cooperativity(g_eff, kappa_0, gamma):
    """Cooperativity g_eff^2 / (kappa_0 gamma)."""
    if kappa_0 <= 0 or gamma <= 0:
        raise DegenerateLinewidth("kappa_0 and gamma must be positive")
    return g_eff**2 / (kappa_0 * gamma)


def linewidth_to_gamma(delta_b_fwhm, g_factor=_DEFAULT_G_FACTOR):
    """Convert a FWHM field linewidth (Tesla) to a HWHM rate in Hz."""
    if delta_b_fwhm <= 0:
        raise DegenerateLinewidth("delta_b_fwhm must be positive")
    return g_factor * BOHR_MAGNETON * delta_b_fwhm / (2 * PLANCK)


def gamma_to_linewidth(gamma, g_factor=_DEFAULT_G_FACTOR):
    """Convert a HWHM rate in Hz to a FWHM field linewidth in Tesla."""
    if gamma <= 0:
        raise DegenerateLinewidth("gamma must be positive")
    return 2 * PLANCK * gamma / (g_factor * BOHR_MAGNETON)


def _golden_max(f, lo, hi, tol):
    # golden-section search for the maximum of a unimodal section
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def normal_mode_peaks(model, b0, n_grid=2001, tol_hz=1.0):
    """Local maxima of |S21|^2 over probe frequency at fixed field.

    Scans a grid of ``n_grid`` points spanning omega_r +/- 6 times the
    largest rate in the model, then refines each interior grid maximum
    by golden-section search to ``tol_hz``.

    Returns
    -------
    ndarray
        Sorted peak frequencies in Hz; a single entry when the normal
        modes are unresolved.
    """
    r = model.resonator
    rates = [r.kappa_0] + [max(res.g_eff, res.gamma) for res in model.resonances]
    span = 6.0 * max(rates)
    grid = np.linspace(r.omega_r - span, r.omega_r + span, n_grid)
    p = s21_power(model, grid, b0)
    peaks = []
    for i in range(1, n_grid - 1):
        if p[i] > p[i - 1] and p[i] > p[i + 1]:
            f = lambda w: s21_power(model, w, b0)
            peaks.append(_golden_max(f, grid[i - 1], grid[i + 1], tol_hz))
    if not peaks:  # monotone-edge fallback, e.g. an extremely wide line
        peaks = [grid[int(np.argmax(p))]]
    peaks = np.sort(np.array(peaks))
    # merge refinements that collapsed onto the same maximum
    keep = [peaks[0]]
    for x in peaks[1:]:
        if x - keep[-1] > 10 * tol_hz:
            keep.append(x)
    return np.array(keep)


def s21_power_gradients(model, omega, b0, names):
    """Analytic partial derivatives of s21_power.

    Supported names: "kappa_0", "kappa_c", "omega_r", "scale",
    "offset", and per-resonance "gamma_{i}" / "g_eff_{i}" with i the
    index into model.resonances.  Returns a dict name -> array matching
    the broadcast shape.  This is the hand-derived counterpart of the
    finite-difference Jacobian and exists so the two routes can be
    checked against each other.
    """
    omega = np.asarray(omega, dtype=float)
    b0 = np.asarray(b0, dtype=float)
    r = model.resonator
    delta_r = omega - r.omega_r
    den = _s21_denominator(model, omega, b0)
    m2 = (den * den.conjugate()).real
    base = model.amplitude_scale * r.kappa_c**2
    units = []  # d(den)/d(param) for each requested name
    for name in names:
        if name == "kappa_0":
            units.append(("den", -np.ones_like(den)))
        elif name == "omega_r":
            s = np.zeros_like(den)
            for res in model.resonances:
                delta_s = _spin_detuning(model, res, b0)
                u = 1j * (delta_r - delta_s) - res.gamma
                s = s + res.g_eff**2 / (u * u)
            units.append(("den", -1j * (1.0 - s)))
        elif name.startswith("gamma_"):
            res = model.resonances[int(name.split("_")[-1])]
            delta_s = _spin_detuning(model, res, b0)
            u = 1j * (delta_r - delta_s) - res.gamma
            units.append(("den", res.g_eff**2 / (u * u)))
        elif name.startswith("g_eff_"):
            res = model.resonances[int(name.split("_")[-1])]
            delta_s = _spin_detuning(model, res, b0)
            u = 1j * (delta_r - delta_s) - res.gamma
            units.append(("den", 2 * res.g_eff / u))
        elif name == "kappa_c":
            units.append(("kc", None))
        elif name == "scale":
            units.append(("scale", None))
        elif name == "offset":
            units.append(("offset", None))
        else:
            raise ValueError(f"unknown parameter {name!r}")
    out = {}
    for name, (kind, dden) in zip(names, units):
        if kind == "den":
            dm2 = 2.0 * (den.conjugate() * dden).real
            out[name] = -base / m2**2 * dm2
        elif kind == "kc":
            out[name] = 2.0 * model.amplitude_scale * r.kappa_c / m2
        elif kind == "scale":
            out[name] = r.kappa_c**2 / m2
        else:
            out[name] = np.ones_like(m2)
    return out
