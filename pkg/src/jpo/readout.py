"""Monte-Carlo readout cycles and the histogram / S-curve analysis pipeline.

A cycle prepares the qubit (probabilistic preparation fault and thermal
population), turns the pump on at t = 0, integrates the field with the
drawn relaxation and phase-switch events, and detects the window-mean
quadratures.  The classification statistic is the magnitude of the in-phase
window mean (the two parametric-oscillation states differ by a pi phase flip
and are counted symmetrically), or the per-sample rectified magnitude in the
rectifying detection scheme.

Every random draw of a shot comes from its own stream keyed by
(seed, prepared_state, shot_index) in a fixed order (preparation fault,
thermal, relaxation, switch flag, switch time, trajectory noise, detection
noise), so results are reproducible bit-for-bit regardless of chunking or
thread count.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields
from typing import Optional

import numpy as np
from scipy.optimize import curve_fit
from scipy.special import erfc

from .detection import DetectionConfig, decimate_window, sample_noise_sigma, window_sample_steps
from .device import OperatingPoint, QubitParameters, steady_state_phase
from .dynamics import SimulationConfig, integrate_batch
from .readout_records import (
    FLAG_DECAYED,
    FLAG_PREP_FAULT,
    FLAG_SWITCHED,
    FLAG_THERMAL,
    RECORD_DTYPE,
)

# chunk width for the batched cycle engine; per-shot streams make results
# independent of this value
CYCLE_CHUNK = 4096


class AnalysisError(RuntimeError):
    """Histogram analysis could not be carried out."""


@dataclass(frozen=True)
class CycleConfig:
    """Readout-cycle timing and fault statistics.

    ``thermal_prob`` may be None, in which case the Boltzmann occupation of
    the supplied qubit parameters is used.  ``decay_clock_lead`` is how long
    before pump-on the relaxation clock starts; the default covers the
    preparation pulse span (52 ns plateau plus two 26 ns Gaussian edges)
    and the 20 ns pulse-to-pump delay.  ``latching`` selects the oscillator
    response to qubit relaxation (see dynamics.JumpSchedule).
    ``forced_decay_time`` overrides the exponential draw for every excited
    shot, for latch-race studies.
    """

    n_shots: int = 100_000
    tau_pi: float = 52e-9
    tau_d: float = 20e-9
    prep_error_prob: float = 0.045
    thermal_prob: Optional[float] = None
    switch_prob: float = 0.024
    prepared_state: int = 1
    latching: bool = False
    decay_clock_lead: float = 124e-9
    forced_decay_time: Optional[float] = None

    def __post_init__(self):
        if self.n_shots < 1:
            raise ValueError("n_shots must be at least 1")
        for name in ("prep_error_prob", "switch_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.thermal_prob is not None and not 0.0 <= self.thermal_prob <= 1.0:
            raise ValueError("thermal_prob must lie in [0, 1]")
        if self.prepared_state not in (0, 1):
            raise ValueError("prepared_state must be 0 or 1")

    def resolve_thermal_prob(self, qubit: QubitParameters) -> float:
        return self.thermal_prob if self.thermal_prob is not None else qubit.thermal_occupation()


def _shot_stream(seed, prepared, index) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((int(seed), int(prepared), int(index))))


def run_cycles(cycle: CycleConfig, point: OperatingPoint, det: DetectionConfig,
               sim: SimulationConfig, qubit: QubitParameters, rng_seed: int,
               threads: int = 1) -> np.ndarray:
    """Simulate ``cycle.n_shots`` readout cycles of one prepared state.

    Returns a structured array with the drawn fault variables and the
    detected window means per shot (see readout_records.RECORD_DTYPE).
    """
    window_end = det.tau_r + det.tau_s
    if sim.t_end < window_end:
        raise ValueError("simulation must cover the sampling window")
    n_steps = int(round(sim.t_end / sim.dt))
    adc_steps, groups = window_sample_steps(det, sim.dt)
    if adc_steps[-1] > n_steps:
        raise ValueError("sampling window extends beyond the simulated time")
    p_th = cycle.resolve_thermal_prob(qubit)
    rotation = steady_state_phase(point.epsilon, point.gamma)
    n_dec_samples = int(groups.max()) + 1
    sigma_det = sample_noise_sigma(det, n_dec_samples)
    scale = det.volts_per_sqrt_photon

    chunks = [(start, min(start + CYCLE_CHUNK, cycle.n_shots))
              for start in range(0, cycle.n_shots, CYCLE_CHUNK)]

    def run_chunk(bounds):
        start, stop = bounds
        n = stop - start
        prep_fault = np.zeros(n, dtype=bool)
        thermal = np.zeros(n, dtype=bool)
        decay_t = np.full(n, np.nan)
        switch_t = np.full(n, np.nan)
        noise = np.empty((n, n_steps, 2))
        det_noise = np.empty((n, n_dec_samples, 2))
        for j in range(n):
            g = _shot_stream(rng_seed, cycle.prepared_state, start + j)
            u = g.random(5)
            prep_fault[j] = (cycle.prepared_state == 1) and (u[0] < cycle.prep_error_prob)
            thermal[j] = u[1] < p_th
            initially_excited = thermal[j] != ((cycle.prepared_state == 1) and not prep_fault[j])
            if initially_excited:
                if cycle.forced_decay_time is not None:
                    decay_t[j] = cycle.forced_decay_time
                else:
                    decay_t[j] = -qubit.t1 * math.log(1.0 - u[2]) - cycle.decay_clock_lead
            if u[3] < cycle.switch_prob:
                switch_t[j] = det.tau_r + u[4] * det.tau_s
            noise[j] = g.standard_normal((n_steps, 2))
            det_noise[j] = g.standard_normal((n_dec_samples, 2))

        initial = thermal != ((cycle.prepared_state == 1) & ~prep_fault)
        res = integrate_batch(
            sim, point.gamma, point.alpha, point.beta,
            delta0=np.full(n, point.delta_q0), delta1=np.full(n, point.delta_q1),
            epsilon=point.epsilon, initial_state=initial,
            decay_times=decay_t, switch_times=switch_t,
            latching=cycle.latching, noise=noise, sample_steps=adc_steps)

        z = decimate_window(res["samples"], groups)
        z = z * np.exp(-1j * rotation)
        z = z + sigma_det * (det_noise[:, :, 0] + 1j * det_noise[:, :, 1])
        v = z * scale

        rec = np.zeros(n, dtype=RECORD_DTYPE)
        rec["shot_index"] = np.arange(start, stop, dtype=np.uint64)
        rec["prepared_state"] = cycle.prepared_state
        rec["initial_state"] = initial.astype(np.uint8)
        flags = (prep_fault * FLAG_PREP_FAULT | thermal * FLAG_THERMAL
                 | ((initial & np.isfinite(decay_t) & (decay_t < window_end)) * FLAG_DECAYED)
                 | np.isfinite(switch_t) * FLAG_SWITCHED)
        rec["fault_flags"] = flags.astype(np.uint8)
        rec["decay_time"] = decay_t
        rec["v_i"] = v.real.mean(axis=1)
        rec["v_q"] = v.imag.mean(axis=1)
        rec["v_rect"] = np.abs(v).mean(axis=1)
        return rec

    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run_chunk, chunks))
    else:
        parts = [run_chunk(c) for c in chunks]
    return np.concatenate(parts)


def run_experiment(cycle: CycleConfig, point: OperatingPoint, det: DetectionConfig,
                   sim: SimulationConfig, qubit: QubitParameters, rng_seed: int,
                   threads: int = 1) -> np.ndarray:
    """Run both prepared states (n_shots each) and concatenate the records."""
    parts = []
    for prepared in (0, 1):
        cfg = _replace(cycle, prepared_state=prepared)
        parts.append(run_cycles(cfg, point, det, sim, qubit, rng_seed, threads))
    return np.concatenate(parts)


def _replace(cfg: CycleConfig, **kw) -> CycleConfig:
    vals = {f.name: getattr(cfg, f.name) for f in fields(cfg)}
    vals.update(kw)
    return CycleConfig(**vals)


# ---------------------------------------------------------------------------
# analysis

@dataclass
class HistogramAnalysis:
    """Histograms, Gaussian fits, S-curves and the discrimination figure."""

    statistic: str
    hist2d: dict
    hist2d_edges: np.ndarray
    hist1d: dict
    hist1d_edges: np.ndarray
    mu0: float
    sigma0: float
    mu1: float
    sigma1: float
    snr: float
    s_grid: np.ndarray
    s_curve0: np.ndarray
    s_curve1: np.ndarray
    discrimination: float
    optimal_threshold: float


def _dominant_gaussian_fit(values: np.ndarray):
    """Mean and width of the dominant peak: robust median/IQR start, then an
    iteratively 3-sigma-trimmed least-squares Gaussian on the binned data."""
    if values.size < 100:
        raise AnalysisError("need at least 100 shots per prepared state")
    # normalise by a positive scale statistic so the fit is scale-equivariant
    span = np.quantile(values, 0.99) - np.quantile(values, 0.01)
    if span <= 0.0:
        raise AnalysisError("degenerate value distribution")
    v = values / span
    counts, edges = np.histogram(v, bins=201)
    centers = 0.5 * (edges[:-1] + edges[1:])
    # locate the dominant peak and stay local to it: a global median/IQR
    # start would straddle the two pi-shifted lobes of a bimodal histogram
    mu = centers[np.argmax(counts)]
    sig = 5.0 * (edges[1] - edges[0])
    for _ in range(4):
        sel = v[np.abs(v - mu) < 3.0 * sig]
        if sel.size < 30:
            break
        mu = np.median(sel)
        new_sig = np.subtract(*np.quantile(sel, [0.75, 0.25])) / 1.349
        if new_sig <= 0.0:
            break
        sig = new_sig
    sel = v[np.abs(v - mu) < 3.5 * sig]
    counts, edges = np.histogram(sel, bins=51)
    centers = 0.5 * (edges[:-1] + edges[1:])

    def gauss(x, amp, m, s):
        return amp * np.exp(-0.5 * ((x - m) / s) ** 2)

    try:
        popt, _ = curve_fit(gauss, centers, counts,
                            p0=(float(counts.max()), float(mu), float(sig)),
                            maxfev=4000)
    except RuntimeError as exc:
        raise AnalysisError(f"gaussian fit did not converge: {exc}") from None
    _, m, s = popt
    return float(m * span), float(abs(s) * span)


def _classification_values(records: np.ndarray, statistic: str) -> np.ndarray:
    if statistic == "vi":
        return np.abs(records["v_i"])
    if statistic == "rect":
        return records["v_rect"]
    raise ValueError("statistic must be 'vi' or 'rect'")


def analyze(records: np.ndarray, statistic: str = "vi") -> HistogramAnalysis:
    """Fit the per-state histograms, build S-curves and extract SNR and
    state discrimination.

    S-curves accumulate counts symmetrically outward from the quiet-state
    centre: S_s(V_th) is the fraction of state-s shots whose classification
    statistic lies at or below V_th; the discrimination is the maximum
    separation of the two curves and fixes the decision threshold.
    """
    rec0 = records[records["prepared_state"] == 0]
    rec1 = records[records["prepared_state"] == 1]
    if rec0.size < 100 or rec1.size < 100:
        raise AnalysisError("need at least 100 shots per prepared state")

    fit_vals0 = rec0["v_i"] if statistic == "vi" else rec0["v_rect"]
    fit_vals1 = rec1["v_i"] if statistic == "vi" else rec1["v_rect"]
    mu0, sigma0 = _dominant_gaussian_fit(fit_vals0)
    mu1, sigma1 = _dominant_gaussian_fit(fit_vals1)
    snr = abs(mu1 - mu0) / (sigma1 + sigma0)

    u0 = np.sort(_classification_values(rec0, statistic))
    u1 = np.sort(_classification_values(rec1, statistic))
    top = max(u0[-1], u1[-1])
    grid = np.linspace(0.0, top, 4001)
    s0 = np.searchsorted(u0, grid, side="right") / u0.size
    s1 = np.searchsorted(u1, grid, side="right") / u1.size
    sep = s0 - s1
    k = int(np.argmax(sep))
    discrimination = float(sep[k])
    v_th = float(grid[k])

    # display binning: +-(|mu1| + 5 sigma1) around the quiet centre
    extent = abs(mu1) + 5.0 * abs(sigma1)
    edges = np.linspace(-extent, extent, 102)
    hist2d = {}
    hist1d = {}
    for state, rec in ((0, rec0), (1, rec1)):
        h2, _, _ = np.histogram2d(rec["v_i"], rec["v_q"], bins=(edges, edges))
        hist2d[state] = h2
        h1, _ = np.histogram(rec["v_i"], bins=edges)
        hist1d[state] = h1

    return HistogramAnalysis(statistic=statistic, hist2d=hist2d, hist2d_edges=edges,
                             hist1d=hist1d, hist1d_edges=edges,
                             mu0=mu0, sigma0=sigma0, mu1=mu1, sigma1=sigma1,
                             snr=snr, s_grid=grid, s_curve0=s0, s_curve1=s1,
                             discrimination=discrimination, optimal_threshold=v_th)


def rectified_analyze(records: np.ndarray) -> HistogramAnalysis:
    """Analysis on the rectified statistic (per-sample magnitude mean), which
    is insensitive to the pi phase switches of the oscillating state."""
    return analyze(records, statistic="rect")


# ---------------------------------------------------------------------------
# error budget

@dataclass
class ErrorBudget:
    """Additive attribution of the discrimination loss.

    Fractions are per prepared-state ensemble (thermal counts both sides).
    ``switching_loss`` is the attributed misclassification from phase-switch
    events; ``switching_loss_bound`` is half the drawn switching fraction,
    the maximal loss a switch can cause when it averages the two pi-shifted
    contributions (the headline bookkeeping uses this bound).
    ``overlap_loss`` is the Gaussian-overlap estimate 0.5*erfc(SNR/sqrt(2))
    per state; ``overlap_residual`` is the measured unattributed rest (the
    tail of the quiet-state histogram beyond the decision threshold).
    ``inferred_fidelity`` adds the qubit-induced losses back onto the
    measured discrimination.
    """

    measured_discrimination: float
    relaxation_loss: float
    preparation_loss: float
    thermal_loss: float
    switching_loss: float
    switching_loss_bound: float
    overlap_loss: float
    overlap_residual: float
    inferred_fidelity: float
    n_shots: int

    def accounting_residual(self) -> float:
        """discrimination + all attributed losses + residual - 1."""
        return (self.measured_discrimination + self.relaxation_loss
                + self.preparation_loss + self.thermal_loss + self.switching_loss
                + self.overlap_residual - 1.0)


def error_budget(records: np.ndarray, analysis: HistogramAnalysis) -> ErrorBudget:
    """Attribute each misclassified shot to its earliest-acting drawn fault.

    Priority: preparation fault, thermal population, relaxation during the
    exposure window, phase switch; anything left is histogram overlap.
    """
    u = _classification_values(records, analysis.statistic)
    predicted = (u > analysis.optimal_threshold).astype(np.uint8)
    prepared = records["prepared_state"]
    flags = records["fault_flags"]
    miss = predicted != prepared

    n0 = int(np.sum(prepared == 0))
    n1 = int(np.sum(prepared == 1))
    if n0 == 0 or n1 == 0:
        raise AnalysisError("need both prepared states for the error budget")

    def frac(mask, state):
        n = n1 if state == 1 else n0
        return float(np.sum(mask & miss & (prepared == state))) / n

    is_prep = (flags & FLAG_PREP_FAULT) > 0
    is_th = ((flags & FLAG_THERMAL) > 0) & ~is_prep
    is_dec = ((flags & FLAG_DECAYED) > 0) & ~is_prep & ~is_th
    is_sw = ((flags & FLAG_SWITCHED) > 0) & ~is_prep & ~is_th & ~is_dec
    is_rest = ~(is_prep | is_th | is_dec | is_sw)

    preparation = frac(is_prep, 1)
    thermal = frac(is_th, 0) + frac(is_th, 1)
    relaxation = frac(is_dec, 0) + frac(is_dec, 1)
    switching = frac(is_sw, 0) + frac(is_sw, 1)
    residual = frac(is_rest, 0) + frac(is_rest, 1)

    d = analysis.discrimination
    overlap = 0.5 * float(erfc(analysis.snr / math.sqrt(2.0)))
    switched_fraction = float(np.mean((flags & FLAG_SWITCHED) > 0))
    return ErrorBudget(measured_discrimination=d,
                       relaxation_loss=relaxation,
                       preparation_loss=preparation,
                       thermal_loss=thermal,
                       switching_loss=switching,
                       switching_loss_bound=0.5 * switched_fraction,
                       overlap_loss=overlap,
                       overlap_residual=residual,
                       inferred_fidelity=d + relaxation + preparation + thermal,
                       n_shots=n0 + n1)


# ---------------------------------------------------------------------------
# discrimination map

@dataclass
class DiscriminationMap:
    delta_q0_values: np.ndarray
    epsilon_values: np.ndarray
    discrimination: np.ndarray    # (n_eps, n_delta)
    best_cell: tuple               # (delta_q0, epsilon, discrimination)


def discrimination_map(delta_q0_values, epsilon_values, cycle: CycleConfig,
                       point: OperatingPoint, det: DetectionConfig,
                       sim: SimulationConfig, qubit: QubitParameters,
                       rng_seed: int, shots_per_cell: int = 2000,
                       threads: int = 1) -> DiscriminationMap:
    """State discrimination over a pump-parameter grid (reduced shot count)."""
    dvals = np.asarray(delta_q0_values, dtype=float)
    evals = np.asarray(epsilon_values, dtype=float)
    out = np.full((evals.size, dvals.size), np.nan)
    cyc = _replace(cycle, n_shots=shots_per_cell)
    for ie, eps in enumerate(evals):
        for id_, d0 in enumerate(dvals):
            cell_point = OperatingPoint.from_ground_state_detuning(
                delta_q0=float(d0), epsilon=float(eps), chi=point.chi,
                alpha=point.alpha, beta=point.beta,
                gamma_ext=point.gamma_ext, gamma_int=point.gamma_int,
                flux=point.flux)
            cell_seed = (rng_seed * 1000003 + ie * 4093 + id_) % (2**63)
            try:
                rec = run_experiment(cyc, cell_point, det, sim, qubit, cell_seed,
                                     threads)
                out[ie, id_] = analyze(rec).discrimination
            except (AnalysisError, ValueError):
                continue
    k = np.unravel_index(np.nanargmax(out), out.shape)
    best = (float(dvals[k[1]]), float(evals[k[0]]), float(out[k]))
    return DiscriminationMap(delta_q0_values=dvals, epsilon_values=evals,
                             discrimination=out, best_cell=best)
