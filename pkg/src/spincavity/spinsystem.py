"""Electron-nuclear spin system of a shallow donor in silicon.

An electron spin S = 1/2 is coupled to the I = 1/2 donor nucleus by an
isotropic hyperfine interaction while both spins sit in a static field
along z.  The 4x4 Hamiltonian is real symmetric and its eigenvalues are
known in closed form, which gives cheap exact energy levels, transition
frequencies, resonance fields, and thermal populations.

Sign convention: the nuclear Zeeman term is taken with a positive sign
and a positive nuclear g-factor.  The closed forms below are internally
consistent with that choice; see the README for the discussion of the
conventional (negative) nuclear g-factor of the donor nucleus.
"""

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .constants import BOHR_MAGNETON, BOLTZMANN, NUCLEAR_MAGNETON, PLANCK
from .errors import InvalidTemperature, NoRoot


class TransitionId(Enum):
    """The two allowed electron spin transitions.

    LOW_FIELD is the level-1 to level-4 transition, HIGH_FIELD the
    level-2 to level-3 transition.  At fixed probe frequency the first
    comes into resonance at the lower static field.
    """

    LOW_FIELD = "LF"
    HIGH_FIELD = "HF"


@dataclass(frozen=True)
class SpinSystemParams:
    """Donor parameters defining the 4-level system.

    Parameters
    ----------
    g_e : float
        Electron g-factor (dimensionless).
    g_n : float
        Nuclear g-factor (dimensionless, positive by convention here).
    hyperfine_hz : float
        Hyperfine constant A/h in Hz.
    """

    g_e: float = 1.9985
    g_n: float = 2.2632
    hyperfine_hz: float = 117.53e6

    def __post_init__(self):
        if self.g_e <= 0:
            raise ValueError("g_e must be positive")
        if self.hyperfine_hz <= 0:
            raise ValueError("hyperfine_hz must be positive")

    @property
    def hyperfine_joule(self):
        return PLANCK * self.hyperfine_hz


@dataclass(frozen=True)
class EnergyLevels:
    """Eigenenergies e1 >= e2 >= e3 >= e4 in Joules at one field."""

    e1: float
    e2: float
    e3: float
    e4: float

    def as_array(self):
        return np.array([self.e1, self.e2, self.e3, self.e4])


@dataclass(frozen=True)
class ThermalState:
    """Occupation probabilities of the four levels at temperature T.

    ``partition_function`` is evaluated with the minimum eigenenergy
    subtracted before exponentiation (finite down to millikelvin), so it
    equals the physical Z only up to the factor exp(-E_min / kT); the
    probabilities are unaffected.
    """

    p1: float
    p2: float
    p3: float
    p4: float
    partition_function: float
    temperature: float

    def as_array(self):
        return np.array([self.p1, self.p2, self.p3, self.p4])


def hamiltonian_matrix(params, b_z):
    """Spin Hamiltonian in the product basis, as a 4x4 matrix in Joules.

    Basis order is (electron up, nucleus up), (up, down), (down, up),
    (down, down).  The hyperfine interaction contributes +-A/4 on the
    diagonal and couples the two middle states with A/2.

    Parameters
    ----------
    params : SpinSystemParams
    b_z : float
        Static field in Tesla, b_z >= 0.
    """
    if b_z < 0:
        raise ValueError("b_z must be non-negative")
    a = params.hyperfine_joule
    ez = 0.5 * b_z * params.g_e * BOHR_MAGNETON
    nz = 0.5 * b_z * params.g_n * NUCLEAR_MAGNETON
    m = np.zeros((4, 4))
    m[0, 0] = a / 4 + ez + nz
    m[1, 1] = -a / 4 + ez - nz
    m[2, 2] = -a / 4 - ez + nz
    m[3, 3] = a / 4 - ez - nz
    m[1, 2] = m[2, 1] = a / 2
    return m


def eigenenergies_closed_form(params, b_z):
    """Closed-form eigenenergies of the 4-level system.

    Returns
    -------
    EnergyLevels
        e1 and e3 are the pure product states, e2 and e4 the hyperfine-
        mixed pair split by sqrt(A^2 + (B_z (g_e mu_B - g_N mu_N))^2).
    """
    if b_z < 0:
        raise ValueError("b_z must be non-negative")
    a = params.hyperfine_joule
    plus = params.g_e * BOHR_MAGNETON + params.g_n * NUCLEAR_MAGNETON
    minus = params.g_e * BOHR_MAGNETON - params.g_n * NUCLEAR_MAGNETON
    root = np.sqrt(a * a + (b_z * minus) ** 2)
    return EnergyLevels(
        e1=a / 4 + 0.5 * b_z * plus,
        e2=-a / 4 + 0.5 * root,
        e3=a / 4 - 0.5 * b_z * plus,
        e4=-a / 4 - 0.5 * root,
    )


def transition_frequency(params, b_z, transition):
    """Frequency of one allowed transition in Hz; increasing in b_z."""
    lv = eigenenergies_closed_form(params, b_z)
    if transition is TransitionId.LOW_FIELD:
        return (lv.e1 - lv.e4) / PLANCK
    return (lv.e2 - lv.e3) / PLANCK


# Bisection bracket for resonance_field, in Tesla.
_B_BRACKET = (1e-3, 2.0)


def resonance_field(params, frequency_hz, transition, freq_tol_hz=1.0):
    """Static field at which a transition meets ``frequency_hz``.

    Bisection on the bracket [1 mT, 2 T]; the transition frequency is
    strictly increasing there, so the root is unique when bracketed.

    Returns
    -------
    float
        Field in Tesla with |transition_frequency - frequency_hz| below
        ``freq_tol_hz``.

    Raises
    ------
    NoRoot
        If the target frequency lies outside the bracket's frequency
        range (e.g. below the zero-field splitting for the branch).
    """
    lo, hi = _B_BRACKET
    f_lo = transition_frequency(params, lo, transition)
    f_hi = transition_frequency(params, hi, transition)
    if not f_lo <= frequency_hz <= f_hi:
        raise NoRoot(
            f"{frequency_hz:.6g} Hz not reachable by {transition.value} "
            f"transition within [{lo:.3g}, {hi:.3g}] T "
            f"([{f_lo:.6g}, {f_hi:.6g}] Hz)"
        )
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        f_mid = transition_frequency(params, mid, transition)
        if abs(f_mid - frequency_hz) < freq_tol_hz:
            return mid
        if f_mid < frequency_hz:
            lo = mid
        else:
            hi = mid
    raise NoRoot("bisection failed to reach the frequency tolerance")


def thermal_state(params, b_z, temperature):
    """Boltzmann occupations of the four levels.

    The minimum eigenenergy is subtracted before exponentiation so the
    weights stay in [0, 1] at any temperature down to sub-millikelvin.

    Raises
    ------
    InvalidTemperature
        If temperature <= 0.
    """
    if temperature <= 0:
        raise InvalidTemperature(f"temperature must be > 0, got {temperature}")
    e = eigenenergies_closed_form(params, b_z).as_array()
    w = np.exp(-(e - e.min()) / (BOLTZMANN * temperature))
    z = w.sum()
    p = w / z
    return ThermalState(
        p1=p[0], p2=p[1], p3=p[2], p4=p[3],
        partition_function=z, temperature=temperature,
    )


def transition_polarization(params, b_z, temperature, transition):
    """Thermal polarization of one transition, |p_upper - p_lower|.

    Note the low-temperature behaviour differs between the branches:
    the low-field polarization saturates to 1, while the high-field one
    peaks near 40 mK and falls back to 0 as T -> 0 because the
    hyperfine interaction keeps the two lowest levels a few tens of MHz
    apart, so the nucleus itself polarizes and empties level 3.
    """
    st = thermal_state(params, b_z, temperature)
    if transition is TransitionId.LOW_FIELD:
        return abs(st.p1 - st.p4)
    return abs(st.p2 - st.p3)
