"""Time-domain integration of the slow-field equation of motion.

The field A obeys (angular units, frame rotating at half the pump frequency)

    dA/dt = i (delta_eff + alpha |A|^2) A + i eps(t) A* - Gamma A - i sqrt(2 Gamma_ext) B(t)

with delta_eff = delta_qubit_state + beta * eps(t)^2 / Gamma.  The linear part
(i delta - Gamma) A is integrated exactly per step (integrating factor); the
nonlinear and pump terms use a second-order Heun correction, and vacuum-scale
fluctuations are injected additively each step (Euler-Maruyama).  The scheme
is therefore exact in the linear limit and second-order accurate otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .device import OperatingPoint, steady_state_phase, steady_state_photons

# chunk width for batched runs; fixed so results do not depend on memory layout
BATCH_CHUNK = 8192

# stiffness guard: dt * fastest rate must stay below this
STIFFNESS_LIMIT = 0.1

# steps between NaN/overflow checks in the batch engine
CHECK_EVERY = 128


class SimulationError(RuntimeError):
    """Integration failed (stiffness guard, NaN or overflow)."""


@dataclass(frozen=True)
class SimulationConfig:
    """Integrator settings.

    ``seed_noise_photons`` sets the stationary sub-threshold occupation of the
    fluctuation seed (photons per quadrature pair); the per-step injected
    variance is Gamma * seed_noise_photons * dt per quadrature.
    ``input_drive``, when given, is (amplitude in sqrt(photons/s), angular
    frequency offset) of a coherent probe B(t).
    """

    dt: float = 1e-9
    t_end: float = 600e-9
    seed_noise_photons: float = 0.5
    rng_seed: int = 1234
    pump_ramp: float = 10e-9
    input_drive: Optional[tuple] = None

    def __post_init__(self):
        if self.dt <= 0.0 or self.t_end <= 0.0:
            raise ValueError("dt and t_end must be positive")
        if self.seed_noise_photons < 0.0:
            raise ValueError("seed noise must be nonnegative")
        if self.pump_ramp < 0.0:
            raise ValueError("pump ramp must be nonnegative")


@dataclass(frozen=True)
class JumpSchedule:
    """Random events of one readout cycle.

    ``decay_time`` is the qubit relaxation instant relative to pump-on
    (None: never; negative: relaxed before the pump started).
    ``latching`` selects the oscillator response to the relaxation jump:
    True follows the full equation of motion with the shifted detuning
    (the field can latch onto the shifted-branch attractor); False forces a
    plain ringdown to the quiet state (pump and Duffing terms dropped after
    the jump), matching the population-level error-budget convention.
    """

    initial_state: int = 1
    decay_time: Optional[float] = None
    preparation_fault: bool = False
    thermal_excited: bool = False
    phase_switch_times: tuple = ()
    latching: bool = True

    def __post_init__(self):
        if self.initial_state not in (0, 1):
            raise ValueError("initial_state must be 0 or 1")


@dataclass
class Trajectory:
    """Sampled field evolution in photon-normalised units."""

    times: np.ndarray
    amplitudes: np.ndarray
    qubit_state_track: np.ndarray
    events: list = field(default_factory=list)

    @property
    def photons(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])


def shot_rng(seed: int, index: int) -> np.random.Generator:
    """Independent, reproducible random stream for shot/cell ``index``."""
    return np.random.default_rng(np.random.SeedSequence((int(seed), int(index))))


def _stiffness_guard(config: SimulationConfig, point: OperatingPoint):
    rates = [point.gamma, abs(point.delta_q0), abs(point.delta_q1), point.epsilon]
    # largest amplitude the field can reach: the stable root on either branch
    for d in (point.delta_q0, point.delta_q1):
        d_eff = d + point.beta * point.epsilon**2 / point.gamma
        sol = steady_state_photons(d_eff, max(point.epsilon, point.gamma * (1 + 1e-12)),
                                   point.alpha, point.gamma) if point.epsilon >= point.gamma else None
        if sol is not None and sol.photons > 0.0:
            rates.append(point.alpha * sol.photons)
    worst = max(rates)
    if config.dt * worst >= STIFFNESS_LIMIT:
        raise SimulationError(
            f"stiffness guard: dt*max_rate = {config.dt * worst:.3f} >= {STIFFNESS_LIMIT}; "
            f"reduce dt below {STIFFNESS_LIMIT / worst:.2e} s")


def integrate(config: SimulationConfig, point: OperatingPoint,
              schedule: JumpSchedule = JumpSchedule(), *,
              initial_amplitude: complex = 0.0,
              stream_index: int = 0) -> Trajectory:
    """Integrate one readout cycle and return the full trajectory.

    Deterministic for fixed (config, point, schedule, stream_index).  The
    qubit-state-dependent detuning switches at ``schedule.decay_time`` with
    the step split at the event; phase switches multiply A by -1.
    """
    _stiffness_guard(config, point)
    dt = config.dt
    n_steps = int(round(config.t_end / dt))
    gamma = point.gamma
    eps0 = point.epsilon
    alpha = point.alpha
    beta_over_gamma = point.beta / gamma
    drive = config.input_drive
    drive_amp = math.sqrt(2.0 * point.gamma_ext) * drive[0] if drive else 0.0

    rng = shot_rng(config.rng_seed, stream_index)
    sigma = math.sqrt(gamma * config.seed_noise_photons * dt)
    noise = rng.standard_normal((n_steps, 2)) if config.seed_noise_photons > 0 else None

    # a relaxation before pump-on simply starts the cycle in the ground state;
    # the ringdown (non-latching) response only concerns an established field
    state = 0 if (schedule.decay_time is not None and schedule.decay_time <= 0.0) \
        else schedule.initial_state
    nonlinear_on = True

    def eps_at(t):
        if config.pump_ramp <= 0.0:
            return eps0
        return eps0 * min(1.0, t / config.pump_ramp)

    def n_of(a, t, nl_on):
        if not nl_on:
            return 0.0j
        e = eps_at(t)
        out = 1j * (alpha * (a.real**2 + a.imag**2) + beta_over_gamma * e * e) * a \
            + 1j * e * a.conjugate()
        if drive:
            out -= 1j * drive_amp * complex(math.cos(drive[1] * t), math.sin(drive[1] * t))
        return out

    def advance(a, t, h, st, nl_on):
        ell = complex(0.0, point.delta_for_state(st)) - gamma
        e_fac = np.exp(ell * h)
        k1 = n_of(a, t, nl_on)
        a_pred = e_fac * (a + h * k1)
        k2 = n_of(a_pred, t + h, nl_on)
        return e_fac * a + 0.5 * h * (e_fac * k1 + k2)

    # events sorted by time; decay may disable the nonlinear terms
    events = []
    if (schedule.initial_state == 1 and schedule.decay_time is not None
            and 0.0 < schedule.decay_time < config.t_end):
        events.append((schedule.decay_time, "decay"))
    for ts in schedule.phase_switch_times:
        if 0.0 <= ts < config.t_end:
            events.append((ts, "switch"))
    events.sort()

    times = np.arange(n_steps + 1) * dt
    amps = np.empty(n_steps + 1, dtype=complex)
    track = np.empty(n_steps + 1, dtype=np.uint8)
    amps[0] = complex(initial_amplitude)
    track[0] = state

    a = complex(initial_amplitude)
    ev_i = 0
    for k in range(n_steps):
        t0, t1 = k * dt, (k + 1) * dt
        t = t0
        while ev_i < len(events) and t < events[ev_i][0] <= t1:
            t_e, kind = events[ev_i]
            if t_e > t:
                a = advance(a, t, t_e - t, state, nonlinear_on)
            if kind == "decay":
                state = 0
                if not schedule.latching:
                    nonlinear_on = False
            else:
                a = -a
            t = t_e
            ev_i += 1
        if t1 > t:
            a = advance(a, t, t1 - t, state, nonlinear_on)
        if noise is not None:
            a += complex(sigma * noise[k, 0], sigma * noise[k, 1])
        if not (math.isfinite(a.real) and math.isfinite(a.imag)) or abs(a) > 1e9:
            raise SimulationError(f"field diverged at t = {t1:.3e} s (step {k})")
        amps[k + 1] = a
        track[k + 1] = state

    return Trajectory(times=times, amplitudes=amps, qubit_state_track=track,
                      events=list(events))


# ---------------------------------------------------------------------------
# vectorised batch engine

def integrate_batch(config: SimulationConfig, gamma: float, alpha: float, beta: float,
                    delta0: np.ndarray, delta1: np.ndarray, epsilon: np.ndarray,
                    initial_state: np.ndarray, decay_times: np.ndarray,
                    switch_times: np.ndarray, latching: bool,
                    noise: Optional[np.ndarray],
                    initial_amplitude: Optional[np.ndarray] = None,
                    sample_steps: Optional[np.ndarray] = None,
                    tail_mean_from: Optional[int] = None,
                    photon_record: bool = False):
    """Advance a batch of independent shots through the same time grid.

    Per-shot events (relaxation jump, phase switches) split the affected
    shot's step at the event time.  Returns a dict with the final amplitudes
    and any requested accumulators:

    - ``samples``: field at the step indices ``sample_steps`` (n_shots x m)
    - ``tail_mean_photons``: per-shot mean |A|^2 over steps >= tail_mean_from
    - ``photons_t``: per-step mean photon number across the batch
    """
    n = delta0.shape[0]
    dt = config.dt
    n_steps = int(round(config.t_end / dt))
    eps_full = np.asarray(epsilon, dtype=float)
    beta_over_gamma = beta / gamma

    a = np.zeros(n, dtype=complex) if initial_amplitude is None else initial_amplitude.astype(complex).copy()
    state = initial_state.astype(bool).copy()
    nl_on = np.ones(n, dtype=bool)
    decay = np.asarray(decay_times, dtype=float)
    # relaxation before pump-on just means a ground-state cycle
    pre_decayed = np.isfinite(decay) & (decay <= 0.0)
    state[pre_decayed] = False

    sigma = math.sqrt(gamma * config.seed_noise_photons * dt)

    samples = None
    sample_lookup = {}
    if sample_steps is not None:
        samples = np.zeros((n, len(sample_steps)), dtype=complex)
        sample_lookup = {int(s): j for j, s in enumerate(sample_steps)}
    tail_sum = np.zeros(n) if tail_mean_from is not None else None
    photons_t = np.zeros(n_steps + 1) if photon_record else None

    eps_is_scalar = eps_full.ndim == 0

    def ramp(t):
        if config.pump_ramp <= 0.0:
            return 1.0
        return min(1.0, t / config.pump_ramp)

    def n_terms(av, e, on):
        out = (1j * (alpha * (av.real**2 + av.imag**2) + beta_over_gamma * e * e)) * av \
            + (1j * e) * np.conj(av)
        if on is not True:
            out = np.where(on, out, 0.0)
        return out

    def advance(av, h, dv, e0, e1, on):
        e_fac = np.exp((1j * dv - gamma) * h)
        k1 = n_terms(av, e0, on)
        a_pred = e_fac * (av + h * k1)
        k2 = n_terms(a_pred, e1, on)
        return e_fac * av + (0.5 * h) * (e_fac * k1 + k2)

    def advance_scalar(ai, t_from, t_to, dv_i, eps_i, on_i):
        h = t_to - t_from
        if h <= 0.0:
            return ai
        e0 = eps_i * ramp(t_from)
        e1 = eps_i * ramp(t_to)
        e_fac = np.exp(complex(0.0, dv_i) * h - gamma * h)
        if on_i:
            def nl(x, e):
                return 1j * (alpha * abs(x) ** 2 + beta_over_gamma * e * e) * x \
                    + 1j * e * x.conjugate()
            k1 = nl(ai, e0)
            k2 = nl(e_fac * (ai + h * k1), e1)
            return e_fac * ai + 0.5 * h * (e_fac * k1 + k2)
        return e_fac * ai

    if photon_record:
        photons_t[0] = float(np.mean(np.abs(a) ** 2))

    switch = np.asarray(switch_times, dtype=float)
    for k in range(n_steps):
        t0 = k * dt
        t1 = t0 + dt
        e0 = eps_full * ramp(t0)
        e1 = eps_full * ramp(t1)
        dv = np.where(state, delta1, delta0)
        a_new = advance(a, dt, dv, e0, e1, True if nl_on.all() else nl_on)

        # redo shots with an event inside this step in two sub-steps
        has_decay = np.isfinite(decay) & (t0 < decay) & (decay <= t1) & state
        has_switch = np.isfinite(switch) & (t0 < switch) & (switch <= t1)
        idx = np.flatnonzero(has_decay | has_switch)
        for i in idx:
            ai = complex(a[i])
            eps_i = float(eps_full) if eps_is_scalar else float(eps_full[i])
            st_i = bool(state[i])
            on_i = bool(nl_on[i])
            ev = []
            if has_decay[i]:
                ev.append((float(decay[i]), "decay"))
            if has_switch[i]:
                ev.append((float(switch[i]), "switch"))
            ev.sort()
            ti = t0
            for t_e, kind in ev:
                ai = advance_scalar(ai, ti, t_e, float(delta1[i] if st_i else delta0[i]),
                                    eps_i, on_i)
                if kind == "decay":
                    st_i = False
                    if not latching:
                        on_i = False
                else:
                    ai = -ai
                ti = t_e
            ai = advance_scalar(ai, ti, t1, float(delta1[i] if st_i else delta0[i]),
                                eps_i, on_i)
            a_new[i] = ai
            state[i] = st_i
            nl_on[i] = on_i

        a = a_new
        if noise is not None:
            a = a + sigma * (noise[:, k, 0] + 1j * noise[:, k, 1])

        if (k + 1) % CHECK_EVERY == 0 or k == n_steps - 1:
            bad = ~np.isfinite(a.real) | ~np.isfinite(a.imag)
            if np.any(bad):
                raise SimulationError(
                    f"field diverged for {int(bad.sum())} shot(s) at step {k + 1}")

        if samples is not None and (k + 1) in sample_lookup:
            samples[:, sample_lookup[k + 1]] = a
        if tail_sum is not None and (k + 1) >= tail_mean_from:
            tail_sum += a.real**2 + a.imag**2
        if photon_record:
            photons_t[k + 1] = float(np.mean(np.abs(a) ** 2))

    out = {"final": a, "state": state}
    if samples is not None:
        out["samples"] = samples
    if tail_sum is not None:
        out["tail_mean_photons"] = tail_sum / max(1, n_steps + 1 - tail_mean_from)
    if photon_record:
        out["photons_t"] = photons_t
    return out


# ---------------------------------------------------------------------------
# region mapping and latch detection

@dataclass
class RegionMap:
    """Time-averaged photon number over a (pump detuning, pump amplitude) grid.

    The detuning axis is the ground-state-branch value delta_q0; for
    qubit_state = 1 each cell is simulated at delta_q0 - 2*chi.
    """

    delta_q0_values: np.ndarray
    epsilon_values: np.ndarray
    photons: np.ndarray           # shape (n_eps, n_delta)
    qubit_state: int


def map_region(delta_q0_values, epsilon_values, config: SimulationConfig,
               point: OperatingPoint, qubit_state: int = 0, *,
               seed_mode: str = "noise", tail_fraction: float = 0.25) -> RegionMap:
    """Simulate the oscillation region over a pump-parameter grid.

    ``seed_mode`` "noise" seeds each cell from vacuum-scale fluctuations with
    an independent per-cell stream; "deterministic" starts each cell from a
    small noise-free field aligned with the steady-state phase, which gives a
    crisp onset for boundary comparisons.
    """
    dvals = np.asarray(delta_q0_values, dtype=float)
    evals = np.asarray(epsilon_values, dtype=float)
    if dvals.size < 2 or evals.size < 2:
        raise ValueError("grid needs at least 2 points per axis")
    if qubit_state not in (0, 1):
        raise ValueError("qubit_state must be 0 or 1")

    dgrid, egrid = np.meshgrid(dvals, evals)
    d_flat = dgrid.ravel()
    e_flat = egrid.ravel()
    if qubit_state == 1:
        d_flat = d_flat - 2.0 * point.chi
    n_cells = d_flat.size
    n_steps = int(round(config.t_end / config.dt))
    gamma = point.gamma

    if seed_mode == "deterministic":
        noise = None
        theta = 0.5 * np.arctan2(gamma, -np.sqrt(np.maximum(e_flat**2 - gamma**2, 0.0)))
        a0 = math.sqrt(max(config.seed_noise_photons, 1e-3)) * np.exp(1j * theta)
        cfg = SimulationConfig(dt=config.dt, t_end=config.t_end, seed_noise_photons=0.0,
                               rng_seed=config.rng_seed, pump_ramp=config.pump_ramp)
    elif seed_mode == "noise":
        noise = np.empty((n_cells, n_steps, 2))
        for i in range(n_cells):
            noise[i] = shot_rng(config.rng_seed, i).standard_normal((n_steps, 2))
        a0 = np.zeros(n_cells, dtype=complex)
        cfg = config
    else:
        raise ValueError("seed_mode must be 'noise' or 'deterministic'")

    res = integrate_batch(
        cfg, gamma, point.alpha, point.beta,
        delta0=d_flat, delta1=d_flat, epsilon=e_flat,
        initial_state=np.zeros(n_cells, dtype=bool),
        decay_times=np.full(n_cells, np.nan),
        switch_times=np.full(n_cells, np.nan),
        latching=True, noise=noise,
        initial_amplitude=np.broadcast_to(a0, (n_cells,)).astype(complex),
        tail_mean_from=int((1.0 - tail_fraction) * n_steps))

    photons = res["tail_mean_photons"].reshape(egrid.shape)
    return RegionMap(delta_q0_values=dvals, epsilon_values=evals,
                     photons=photons, qubit_state=qubit_state)


def boundary_onset_indices(region: RegionMap, threshold_fraction: float = 0.05) -> np.ndarray:
    """Per-detuning column, the first pump-amplitude index that oscillates (-1: none)."""
    thr = threshold_fraction * np.nanmax(region.photons)
    out = np.full(region.delta_q0_values.size, -1, dtype=int)
    above = region.photons > thr
    for j in range(out.size):
        hits = np.flatnonzero(above[:, j])
        if hits.size:
            out[j] = hits[0]
    return out


def detect_latch(traj: Trajectory, point: OperatingPoint,
                 photon_threshold: float = 0.5) -> Optional[float]:
    """First time the field exceeds ``photon_threshold`` of the excited-branch
    steady state and stays above it for at least 5/Gamma.  None if never."""
    if not 0.0 < photon_threshold < 1.0:
        raise ValueError("photon_threshold must lie in (0, 1)")
    gamma = point.gamma
    s0 = int(traj.qubit_state_track[0])
    d_eff = point.delta_for_state(s0) + point.beta * point.epsilon**2 / gamma
    if point.epsilon < gamma:
        return None
    n_ss = steady_state_photons(d_eff, point.epsilon, point.alpha, gamma).photons
    if n_ss <= 0.0:
        return None
    thr = photon_threshold * n_ss
    dwell = int(math.ceil(5.0 / gamma / traj.dt))
    above = traj.photons > thr
    # first index from which `above` holds for a full dwell window
    run = 0
    for i in range(above.size):
        run = run + 1 if above[i] else 0
        if run >= dwell:
            return float(traj.times[i - dwell + 1])
    return None
