"""Measurement chain: intracavity field to sampled heterodyne quadratures.

The heterodyne stage is modelled at complex baseband (the field equation
already lives in the frame rotating at half the pump frequency); the
intermediate frequency and raw sampling rate are kept for interface fidelity
and set the decimation grid.  All chain noise is lumped into one additive
complex Gaussian term at the resonator output, parameterised in photon units
by ``added_noise_photons``: the variance of a sampling-window quadrature mean
is added_noise_photons / 4 in amplitude units, which reproduces the
photon-number calibration |A|^2 / SNR^2 of the detected histograms.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.constants import hbar

from .device import DeviceParameters, dressed_resonator_frequency, duffing_alpha
from .dynamics import Trajectory

TWO_PI = 2.0 * math.pi

# reference impedance anchoring the (otherwise arbitrary) digitizer voltage scale
R_REF_OHM = 50.0


class DetectionError(ValueError):
    """Raised when a trajectory cannot be sampled as configured."""


@dataclass(frozen=True)
class DetectionConfig:
    """Heterodyne detection and sampling settings.

    ``added_noise_photons`` is the chain noise referred to the resonator
    output, defined operationally through the window-mean quadrature variance
    (see module docstring).  ``tau_r`` is the delay before the sampling window
    opens, ``tau_s`` the window length.  ``omega_ref`` sets the photon-to-power
    conversion of the voltage scale.
    """

    added_noise_photons: float = 16.1
    if_frequency: float = 187.5e6
    adc_rate: float = 250e6
    decimated_rate: float = 20e6
    gain_db: float = 81.0
    tau_r: float = 300e-9
    tau_s: float = 300e-9
    omega_ref: float = TWO_PI * 5.218e9
    gamma_ext_ref: float = TWO_PI * 1.02e6

    def __post_init__(self):
        if self.added_noise_photons < 0.0:
            raise ValueError("added noise must be nonnegative")
        if not self.decimated_rate < self.adc_rate:
            raise ValueError("decimated rate must be below the raw sampling rate")
        if self.tau_r < 0.0 or self.tau_s <= 0.0:
            raise ValueError("sampling window must have tau_r >= 0 and tau_s > 0")

    @property
    def volts_per_sqrt_photon(self) -> float:
        """Digitizer voltage per sqrt(photon), fixed by the chain gain.

        Chosen so that |V|^2 / R_REF equals the output photon-flux power
        2 (gamma_ext_ref/2pi) hbar omega_ref |A|^2 amplified by the chain
        gain.  The absolute value is arbitrary; the analysis only ever uses
        voltage ratios.
        """
        p_per_photon = (2.0 * (self.gamma_ext_ref / TWO_PI) * hbar * self.omega_ref
                        * 10.0 ** (self.gain_db / 10.0))
        return math.sqrt(p_per_photon * R_REF_OHM)

    def window_power_watts(self, mean_vi: float, mean_vq: float) -> float:
        """Window-mean signal power at the digitizer for the scale above."""
        return (mean_vi**2 + mean_vq**2) / R_REF_OHM


@dataclass
class DetectionResult:
    """Decimated quadrature stream over the sampling window plus its means.

    Voltages are in digitizer units; ``mean_vi`` / ``mean_vq`` are the
    window means and ``rectified_mean`` averages the per-sample magnitude
    (the rectifying detection scheme).
    """

    times: np.ndarray
    v_i: np.ndarray
    v_q: np.ndarray
    mean_vi: float
    mean_vq: float
    rectified_mean: float
    scale: float


def output_field(a, b, gamma_ext):
    """Travelling output field C = B - i sqrt(2 gamma_ext) A (photons/s units)."""
    return b - 1j * math.sqrt(2.0 * gamma_ext) * np.asarray(a)


def window_sample_steps(det: DetectionConfig, dt: float, pump_on: float = 0.0):
    """Step indices of the raw (adc) samples inside the window and their
    decimated group labels."""
    t0 = pump_on + det.tau_r
    n_adc = int(math.floor(det.tau_s * det.adc_rate))
    t_adc = t0 + np.arange(n_adc) / det.adc_rate
    steps = np.round(t_adc / dt).astype(int)
    groups = np.floor((t_adc - t0) * det.decimated_rate).astype(int)
    return steps, groups


def decimate_window(values: np.ndarray, groups: np.ndarray):
    """Block-average adc samples into decimated samples (last axis = samples)."""
    n_groups = int(groups.max()) + 1
    out = np.empty(values.shape[:-1] + (n_groups,), dtype=values.dtype)
    for g in range(n_groups):
        sel = groups == g
        out[..., g] = values[..., sel].mean(axis=-1)
    return out


def sample_noise_sigma(det: DetectionConfig, n_samples: int) -> float:
    """Per-decimated-sample quadrature noise in amplitude units.

    Fixed by the operational definition of added_noise_photons: the window
    mean of n_samples independent samples has quadrature variance n_add/4.
    """
    return math.sqrt(det.added_noise_photons * n_samples / 4.0)


def detect(traj: Trajectory, det: DetectionConfig, rng: np.random.Generator,
           rotation_phase: float = 0.0, pump_on: float = 0.0) -> DetectionResult:
    """Sample one trajectory through the detection chain.

    Adds the chain noise per decimated sample, applies the demodulation
    rotation and the voltage scale, and returns the stream plus window means.
    """
    dt = traj.dt
    steps, groups = window_sample_steps(det, dt, pump_on)
    if steps[-1] >= traj.amplitudes.size:
        raise DetectionError("sampling window extends beyond the trajectory")
    raw = traj.amplitudes[steps]
    z = decimate_window(raw, groups)
    m = z.size
    z = z * np.exp(-1j * rotation_phase)
    if det.added_noise_photons > 0.0:
        xi = rng.standard_normal((m, 2))
        z = z + sample_noise_sigma(det, m) * (xi[:, 0] + 1j * xi[:, 1])
    scale = det.volts_per_sqrt_photon
    v = z * scale
    t0 = pump_on + det.tau_r
    t_dec = t0 + (np.arange(m) + 0.5) / det.decimated_rate
    return DetectionResult(times=t_dec, v_i=v.real.copy(), v_q=v.imag.copy(),
                           mean_vi=float(v.real.mean()), mean_vq=float(v.imag.mean()),
                           rectified_mean=float(np.abs(v).mean()), scale=scale)


# ---------------------------------------------------------------------------
# attenuation / gain / photon-number calibration

def duffing_frequency_vs_power(dev: DeviceParameters, flux, att_db, probe_powers_dbm,
                               omega_r0: Optional[float] = None):
    """Predicted resonance versus probe power at the generator.

    omega_r(P) = omega_r(0) - (2 alpha gamma_ext / gamma^2)
                 * 10^((P - Att - 30)/10) / (hbar omega_r(0)).
    """
    p = np.asarray(probe_powers_dbm, dtype=float)
    w0 = dressed_resonator_frequency(dev, flux) if omega_r0 is None else omega_r0
    alpha = duffing_alpha(dev, flux)
    slope = 2.0 * alpha * dev.gamma_ext / dev.gamma_total**2 / (hbar * w0)
    return w0 - slope * 10.0 ** ((p - att_db - 30.0) / 10.0)


def fit_attenuation(probe_powers_dbm, frequencies, dev: DeviceParameters, flux,
                    omega_r0: Optional[float] = None):
    """Least-squares line attenuation from a resonance-vs-power series.

    The model is linear in u = 10^(-Att/10), so the single-parameter fit has
    a closed form.  Returns (att_db, rms residual in rad/s).
    """
    p = np.asarray(probe_powers_dbm, dtype=float)
    w = np.asarray(frequencies, dtype=float)
    if p.size != w.size or p.size < 2:
        raise ValueError("need at least two (power, frequency) points")
    if np.ptp(p) == 0.0:
        raise ValueError("degenerate dataset: all probe powers equal")
    if p.size < 3:
        warnings.warn("attenuation fit with fewer than 3 points: zero residual degrees of freedom",
                      stacklevel=2)
    w0 = dressed_resonator_frequency(dev, flux) if omega_r0 is None else omega_r0
    alpha = duffing_alpha(dev, flux)
    k = (2.0 * alpha * dev.gamma_ext / dev.gamma_total**2 / (hbar * w0)
         * 10.0 ** ((p - 30.0) / 10.0))
    u = float(k @ (w0 - w) / (k @ k))
    if u <= 0.0:
        raise ValueError("attenuation fit failed: non-physical (negative) frequency pull")
    att = -10.0 * math.log10(u)
    resid = w - (w0 - k * u)
    return att, float(np.sqrt(np.mean(resid**2)))


def gain_from_attenuation(s11_sq_db: float, att_db: float) -> float:
    """Chain gain G = |S11|^2 + Att (dB), assuming full off-resonant reflection."""
    return s11_sq_db + att_db


def photons_from_power(p_s, p_n, gamma_ext, omega_r, gain_db):
    """Intracavity photons from signal and noise power at the digitizer.

    |A|^2 = (P_s - P_n) / (2 (gamma_ext/2pi) hbar omega_r 10^(G/10)).
    """
    p_s = np.asarray(p_s, dtype=float)
    if np.any(p_s < p_n):
        raise ValueError("signal power below noise power")
    denom = 2.0 * (gamma_ext / TWO_PI) * hbar * omega_r * 10.0 ** (gain_db / 10.0)
    out = (p_s - p_n) / denom
    return float(out) if out.ndim == 0 else out


def power_from_photons(photons, gamma_ext, omega_r, gain_db, p_n=0.0):
    """Forward model of the power conversion (exact inverse of photons_from_power)."""
    return (np.asarray(photons, dtype=float)
            * 2.0 * (gamma_ext / TWO_PI) * hbar * omega_r * 10.0 ** (gain_db / 10.0) + p_n)


# ---------------------------------------------------------------------------
# calibration datasets

@dataclass
class CalibrationSeries:
    flux: float
    powers_dbm: np.ndarray
    frequencies: np.ndarray     # rad/s


@dataclass
class CalibrationDataset:
    series: list

    @classmethod
    def from_rows(cls, flux, powers_dbm, frequencies_hz) -> "CalibrationDataset":
        """Group rows by flux bias and sort each series by power."""
        flux = np.asarray(flux, dtype=float)
        p = np.asarray(powers_dbm, dtype=float)
        f = np.asarray(frequencies_hz, dtype=float)
        series = []
        for fb in np.unique(flux):
            sel = flux == fb
            order = np.argsort(p[sel], kind="stable")
            series.append(CalibrationSeries(flux=float(fb),
                                            powers_dbm=p[sel][order],
                                            frequencies=TWO_PI * f[sel][order]))
        return cls(series=series)

    @classmethod
    def load(cls, path) -> "CalibrationDataset":
        """Read a columnar text file: flux_bias_F  probe_power_dbm  resonant_frequency_hz."""
        rows = np.loadtxt(path, ndmin=2)
        if rows.shape[1] != 3:
            raise ValueError("calibration dataset needs 3 columns: flux, power_dbm, frequency_hz")
        return cls.from_rows(rows[:, 0], rows[:, 1], rows[:, 2])


@dataclass
class CalibrationReport:
    fluxes: np.ndarray
    attenuations_db: np.ndarray
    residuals: np.ndarray
    mean_attenuation_db: float
    gain_db: float
    photons_per_watt: float


def calibrate_dataset(ds: CalibrationDataset, dev: DeviceParameters,
                      s11_sq_db: float = 0.0) -> CalibrationReport:
    """Fit the attenuation per flux bias, then derive the chain gain and the
    photon-number conversion at the demonstration resonance."""
    atts, resids, fluxes = [], [], []
    for s in ds.series:
        att, r = fit_attenuation(s.powers_dbm, s.frequencies, dev, s.flux)
        atts.append(att)
        resids.append(r)
        fluxes.append(s.flux)
    mean_att = float(np.mean(atts))
    gain = gain_from_attenuation(s11_sq_db, mean_att)
    omega_r = dressed_resonator_frequency(dev, fluxes[len(fluxes) // 2])
    photons_per_watt = photons_from_power(1.0, 0.0, dev.gamma_ext, omega_r, gain)
    return CalibrationReport(fluxes=np.array(fluxes), attenuations_db=np.array(atts),
                             residuals=np.array(resids), mean_attenuation_db=mean_att,
                             gain_db=gain, photons_per_watt=photons_per_watt)


def synthesize_calibration_rows(dev: DeviceParameters, fluxes, powers_dbm, att_db,
                                freq_noise_rel: float = 0.0, seed: int = 0):
    """Generate dataset rows from the forward Duffing-shift model.

    ``freq_noise_rel`` scales Gaussian noise on the frequency PULL (not the
    absolute frequency), mimicking fit scatter in the source data.
    """
    rng = np.random.default_rng(seed)
    rows = []
    for fb in np.atleast_1d(fluxes):
        w = duffing_frequency_vs_power(dev, float(fb), att_db, powers_dbm)
        w0 = dressed_resonator_frequency(dev, float(fb))
        if freq_noise_rel > 0.0:
            pull = w0 - w
            w = w0 - pull * (1.0 + freq_noise_rel * rng.standard_normal(pull.shape))
        for p, wi in zip(np.atleast_1d(powers_dbm), np.atleast_1d(w)):
            rows.append((float(fb), float(p), float(wi / TWO_PI)))
    return rows
