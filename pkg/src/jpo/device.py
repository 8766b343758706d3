"""Closed-form physics of a flux-pumped quarter-wave resonator coupled to a transmon.

All frequencies and rates are angular (rad/s).  Flux bias ``F`` is the
SQUID flux normalised to the flux quantum, F = pi * Phi_dc / Phi_0, in
radians.  Photon numbers are dimensionless.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.constants import e as E_CHARGE, h as PLANCK_H, hbar, k as K_B

TWO_PI = 2.0 * math.pi

# resistance quantum h/e^2 (ohm)
R_K_OHM = PLANCK_H / E_CHARGE**2

# |cos F| and |sin F| must exceed this before evaluating the divergent
# nonlinear-coefficient formulas
TRIG_GUARD = 1e-6

# dispersive-regime warning threshold: |Delta| > DISPERSIVE_RATIO * g01
DISPERSIVE_RATIO = 5.0


class DomainError(ValueError):
    """Raised when a tuning formula is evaluated outside its validity range."""


@dataclass(frozen=True)
class DeviceParameters:
    """Static device constants.

    Parameters
    ----------
    ej : float
        Josephson energy of the transmon (rad/s).
    ec : float
        Charging energy (rad/s).
    g01 : float
        Qubit-resonator coupling rate (rad/s).
    omega_bare : float
        Bare quarter-wave resonance, i.e. without SQUID participation (rad/s).
    participation : float
        Inductive participation ratio of the SQUID at zero flux (dimensionless).
    gamma_ext : float
        External damping rate through the coupling capacitor (rad/s).
    gamma_int : float
        Internal loss rate (rad/s).
    flux_map_scale, flux_map_offset : float
        Constants of the transmon flux map F' = F / scale + offset.
    z0 : float
        Resonator characteristic impedance (ohm).
    r_k : float
        Resistance quantum (ohm); override only for testing.
    """

    ej: float
    ec: float
    g01: float
    omega_bare: float
    participation: float
    gamma_ext: float
    gamma_int: float
    flux_map_scale: float = 8.88
    flux_map_offset: float = 0.58
    z0: float = 50.0
    r_k: float = R_K_OHM

    def __post_init__(self):
        for name in ("ej", "ec", "omega_bare", "gamma_ext", "gamma_int", "z0", "r_k"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be strictly positive")
        if self.g01 < 0.0:
            raise ValueError("g01 must be nonnegative")
        if not 0.0 < self.participation < 1.0:
            raise ValueError("participation ratio must lie in (0, 1)")

    @property
    def gamma_total(self) -> float:
        """Total damping rate Gamma = Gamma_ext + Gamma_int (derived, never stored)."""
        return self.gamma_ext + self.gamma_int


@dataclass(frozen=True)
class QubitParameters:
    """Qubit coherence and thermal parameters."""

    t1: float
    t2_star: float
    temperature: float
    omega: float

    def __post_init__(self):
        if self.t1 <= 0.0:
            raise ValueError("t1 must be positive")
        if self.t2_star > 2.0 * self.t1:
            raise ValueError("t2_star cannot exceed 2*t1")
        if self.temperature < 0.0:
            raise ValueError("temperature must be nonnegative")

    def thermal_occupation(self) -> float:
        """Equilibrium excited-state probability at the qubit frequency."""
        if self.temperature == 0.0:
            return 0.0
        w = math.exp(-hbar * self.omega / (K_B * self.temperature))
        return w / (1.0 + w)


@dataclass(frozen=True)
class OperatingPoint:
    """Pump settings and the per-point coefficients of the field equation of motion.

    ``delta`` is the pump detuning delta = omega_p/2 - omega_r taken from the
    midpoint of the two qubit-state resonator frequencies, so the
    state-dependent detunings are mirror images about it.
    """

    delta: float
    epsilon: float
    chi: float
    alpha: float
    beta: float
    gamma_ext: float
    gamma_int: float
    flux: float = 0.0

    def __post_init__(self):
        if self.epsilon < 0.0:
            raise ValueError("pump amplitude epsilon must be nonnegative")
        if abs(self.flux) >= math.pi / 2:
            raise ValueError("flux bias must satisfy |F| < pi/2")
        if self.gamma_ext <= 0.0 or self.gamma_int < 0.0:
            raise ValueError("damping rates must be positive")

    @property
    def gamma(self) -> float:
        return self.gamma_ext + self.gamma_int

    @property
    def delta_q0(self) -> float:
        """Effective pump detuning with the qubit in its ground state."""
        return self.delta + self.chi

    @property
    def delta_q1(self) -> float:
        """Effective pump detuning with the qubit in its excited state."""
        return self.delta - self.chi

    def delta_for_state(self, state: int) -> float:
        return self.delta_q1 if state else self.delta_q0

    @classmethod
    def from_ground_state_detuning(cls, delta_q0, epsilon, chi, alpha, beta,
                                   gamma_ext, gamma_int, flux=0.0) -> "OperatingPoint":
        """Build a point from the ground-state-branch detuning (the pump-map x axis)."""
        return cls(delta=delta_q0 - chi, epsilon=epsilon, chi=chi, alpha=alpha,
                   beta=beta, gamma_ext=gamma_ext, gamma_int=gamma_int, flux=flux)

    @classmethod
    def from_device(cls, dev: DeviceParameters, flux, delta, epsilon) -> "OperatingPoint":
        """Derive chi, alpha, beta from the closed-form device model at ``flux``."""
        return cls(delta=delta, epsilon=epsilon,
                   chi=dispersive_shift(dev, flux),
                   alpha=duffing_alpha(dev, flux),
                   beta=pump_induced_beta(dev, flux),
                   gamma_ext=dev.gamma_ext, gamma_int=dev.gamma_int, flux=flux)


# ---------------------------------------------------------------------------
# tuning curves

def bare_resonator_frequency(dev: DeviceParameters, flux) -> float:
    """Resonance of the SQUID-terminated quarter-wave line, without the qubit.

    omega_r(F) = omega_bare / (1 + participation / |cos F|); monotonically
    decreasing in |F| and singular at F = +-pi/2.
    """
    flux = np.asarray(flux, dtype=float)
    c = np.abs(np.cos(flux))
    if np.any(np.abs(flux) >= math.pi / 2) or np.any(c < TRIG_GUARD):
        raise DomainError("bare resonator frequency requires |F| < pi/2")
    out = dev.omega_bare / (1.0 + dev.participation / c)
    return float(out) if out.ndim == 0 else out


def qubit_frequency(dev: DeviceParameters, flux) -> float:
    """Transmon 0-1 transition, omega_a = sqrt(8 EJ |cos F'| EC) - EC.

    F' is the transmon's effective flux, F' = F / flux_map_scale + flux_map_offset.
    """
    flux = np.asarray(flux, dtype=float)
    fp = flux / dev.flux_map_scale + dev.flux_map_offset
    out = np.sqrt(8.0 * dev.ej * np.abs(np.cos(fp)) * dev.ec) - dev.ec
    return float(out) if out.ndim == 0 else out


def qubit_resonator_detuning(dev: DeviceParameters, flux) -> float:
    """Delta(F) = omega_a(F') - omega_r(F)."""
    return qubit_frequency(dev, flux) - bare_resonator_frequency(dev, flux)


def dispersive_shift(dev: DeviceParameters, flux) -> float:
    """Qubit-state-dependent resonator pull chi = -(g01^2/Delta) * EC/(Delta - EC).

    Warns (does not raise) when |Delta| <= 5 g01, outside the dispersive regime.
    """
    if dev.g01 == 0.0:
        return 0.0 if np.ndim(flux) == 0 else np.zeros(np.shape(flux))
    delta = qubit_resonator_detuning(dev, flux)
    if np.any(np.abs(delta) < TRIG_GUARD * dev.ec) or np.any(np.abs(delta - dev.ec) < TRIG_GUARD * dev.ec):
        raise ZeroDivisionError("dispersive shift diverges at Delta = 0 or Delta = EC")
    if np.any(np.abs(delta) <= DISPERSIVE_RATIO * dev.g01):
        warnings.warn("operating outside the dispersive regime: |Delta| <= 5 g01",
                      stacklevel=2)
    out = -(dev.g01**2 / delta) * (dev.ec / (delta - dev.ec))
    return float(out) if np.ndim(out) == 0 else out


def dressed_resonator_frequency(dev: DeviceParameters, flux) -> float:
    """Resonator frequency with the qubit in its ground state, omega_r - g01^2/Delta."""
    wr = bare_resonator_frequency(dev, flux)
    if dev.g01 == 0.0:
        return wr
    delta = qubit_resonator_detuning(dev, flux)
    if np.any(np.abs(delta) < TRIG_GUARD * dev.ec):
        raise ZeroDivisionError("dressed frequency diverges at Delta = 0")
    out = wr - dev.g01**2 / delta
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# nonlinear coefficients and oscillation region

def duffing_alpha(dev: DeviceParameters, flux) -> float:
    """Duffing (Kerr) coefficient per photon.

    alpha(F) = pi^2 * omega_bare * Z0 / R_K * (participation / cos F)^3;
    grows as F -> +-pi/2 where the SQUID dominates the inductance.
    """
    flux = np.asarray(flux, dtype=float)
    c = np.cos(flux)
    if np.any(np.abs(flux) >= math.pi / 2) or np.any(np.abs(c) < TRIG_GUARD):
        raise DomainError("duffing coefficient requires |cos F| > 0")
    alpha0 = math.pi**2 * dev.omega_bare * dev.z0 / dev.r_k
    out = alpha0 * (dev.participation / c) ** 3
    return float(out) if out.ndim == 0 else out


def pump_induced_beta(dev: DeviceParameters, flux) -> float:
    """Dimensionless pump-induced frequency-pull coefficient.

    beta(F) = Gamma / (omega_bare * participation) * cos^3 F / sin^2 F;
    diverges as F -> 0 where flux modulation barely tunes the resonator.
    """
    flux = np.asarray(flux, dtype=float)
    s = np.sin(flux)
    if np.any(np.abs(s) < TRIG_GUARD):
        raise DomainError("pump-induced shift coefficient requires |sin F| > 0")
    beta0 = dev.gamma_total / (dev.omega_bare * dev.participation)
    out = beta0 * np.cos(flux) ** 3 / s**2
    return float(out) if out.ndim == 0 else out


def nonlinear_shift(alpha, beta, photons, epsilon, gamma) -> float:
    """Total amplitude- and pump-dependent frequency shift.

    delta_omega = -alpha * photons - beta * gamma * (epsilon/gamma)^2.
    """
    photons = np.asarray(photons, dtype=float)
    if np.any(photons < 0.0):
        raise ValueError("photon number must be nonnegative")
    out = -alpha * photons - beta * gamma * (epsilon / gamma) ** 2
    return float(out) if np.ndim(out) == 0 else out


def instability_threshold(delta, beta, gamma):
    """Pump amplitudes bounding the parametric-oscillation region at fixed detuning.

    Returns ``(eps_lower, eps_upper)`` in rad/s.  Between the branches the
    zero-amplitude state is unstable.  Entries are NaN where the discriminant
    1 - 4 beta (beta + delta/gamma) is negative (no boundary).  The lower
    branch reduces to gamma * sqrt(1 + (delta/gamma)^2) as beta -> 0; the
    upper branch diverges in that limit.

    Evaluated in a cancellation-free form, so small beta stays accurate:
        E_lower^2 = 2 (1 + x^2) / (1 - 2 b x + s),   s = sqrt(1 - 4 b (b + x))
        E_upper^2 = (1 - 2 b x + s) / (2 b^2)
    with x = delta/gamma and E = eps/gamma.
    """
    x = np.asarray(delta, dtype=float) / gamma
    b = float(beta)
    if b < 0.0:
        raise ValueError("beta must be nonnegative")
    if b == 0.0:
        lower = gamma * np.sqrt(1.0 + x**2)
        upper = np.full_like(lower, np.inf)
        return (float(lower), float(upper)) if np.ndim(delta) == 0 else (lower, upper)
    disc = 1.0 - 4.0 * b * (b + x)
    with np.errstate(invalid="ignore"):
        s = np.sqrt(np.where(disc >= 0.0, disc, np.nan))
        denom = 1.0 - 2.0 * b * x + s
        e_lo = gamma * np.sqrt(2.0 * (1.0 + x**2) / denom)
        e_hi = gamma * np.sqrt(denom) / (math.sqrt(2.0) * b)
    if np.ndim(delta) == 0:
        return float(e_lo), float(e_hi)
    return e_lo, e_hi


@dataclass(frozen=True)
class SteadyStateSolution:
    """Roots of the steady-state amplitude equation at one operating point.

    ``branches`` holds (photon number, stable) pairs for the finite-amplitude
    roots alpha*n = -delta +- sqrt(eps^2 - gamma^2); each finite root exists
    twice in the field plane, at phases pi apart.  ``regime`` is one of
    "below-threshold", "quiet", "oscillating", "tristable".
    """

    branches: tuple
    zero_stable: bool
    regime: str

    @property
    def photons(self) -> float:
        """Largest stable finite-amplitude photon number, 0.0 if none."""
        stable = [n for n, ok in self.branches if ok]
        return max(stable) if stable else 0.0


def steady_state_photons(delta, epsilon, alpha, gamma) -> SteadyStateSolution:
    """Solve the steady-state amplitude equation alpha*n = -delta +- sqrt(eps^2 - gamma^2).

    Classifies the zero solution by linear stability (unstable between the
    beta=0 threshold branches) and the finite roots by the sign of
    d(residual)/dn: the '+' root is stable, the '-' root is a saddle.
    """
    if alpha <= 0.0 or gamma <= 0.0:
        raise ValueError("alpha and gamma must be positive")
    if epsilon < gamma:
        return SteadyStateSolution(branches=(), zero_stable=True, regime="below-threshold")
    s = math.sqrt(epsilon**2 - gamma**2)
    zero_stable = epsilon**2 < gamma**2 + delta**2
    branches = []
    n_hi = (-delta + s) / alpha
    if n_hi > 0.0:
        branches.append((n_hi, True))
    n_lo = (-delta - s) / alpha
    if n_lo > 0.0:
        branches.append((n_lo, False))
    if not branches:
        regime = "quiet"
    elif zero_stable:
        regime = "tristable"
    else:
        regime = "oscillating"
    return SteadyStateSolution(branches=tuple(branches), zero_stable=zero_stable,
                               regime=regime)


def steady_state_phase(epsilon, gamma, stable: bool = True) -> float:
    """Phase of a finite-amplitude steady state (the pi-shifted twin also exists).

    From eps*sin(2 theta) = gamma, with cos(2 theta) = -sqrt(eps^2-gamma^2)/eps
    on the stable branch (+ sign on the saddle branch).
    """
    if epsilon < gamma:
        raise ValueError("no finite-amplitude state below epsilon = gamma")
    s = math.sqrt(epsilon**2 - gamma**2)
    return 0.5 * math.atan2(gamma, -s if stable else s)


def steady_state_amplitude(delta, epsilon, alpha, gamma) -> complex:
    """Complex field of the stable oscillating state (zero if none exists)."""
    sol = steady_state_photons(delta, epsilon, alpha, gamma)
    if sol.photons == 0.0:
        return 0.0j
    return math.sqrt(sol.photons) * np.exp(1j * steady_state_phase(epsilon, gamma))


def purcell_limited_t1(gamma_ext, g01, detuning) -> float:
    """Qubit lifetime limit from decay through the resonator port.

    T1 = [2 * gamma_ext * (g01 / Delta)^2]^-1.
    """
    if g01 == 0.0 or detuning == 0.0:
        raise ZeroDivisionError("purcell limit undefined for g01 = 0 or Delta = 0")
    return 1.0 / (2.0 * gamma_ext * (g01 / detuning) ** 2)
