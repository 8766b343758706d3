import math

import numpy as np
import pytest

from jpo.device import OperatingPoint, steady_state_amplitude, steady_state_photons
from jpo.dynamics import (
    JumpSchedule,
    RegionMap,
    SimulationConfig,
    SimulationError,
    Trajectory,
    boundary_onset_indices,
    detect_latch,
    integrate,
    integrate_batch,
    map_region,
    shot_rng,
)

TWO_PI = 2.0 * math.pi
GAMMA = TWO_PI * 1.32e6


def make_point(delta_over_gamma, eps_over_gamma, alpha=TWO_PI * 21.6e3, beta=0.0,
               chi=0.0):
    return OperatingPoint(delta=delta_over_gamma * GAMMA, epsilon=eps_over_gamma * GAMMA,
                          chi=chi, alpha=alpha, beta=beta,
                          gamma_ext=TWO_PI * 1.02e6, gamma_int=TWO_PI * 0.30e6)


def quiet_config(t_end, dt=1e-9, seed=3):
    return SimulationConfig(dt=dt, t_end=t_end, seed_noise_photons=0.0, rng_seed=seed,
                            pump_ramp=0.0)


# ---------------------------------------------------------------------------
# oracles

def test_linear_decay_oracle():
    # eps = 0, alpha = 0, no noise: A(t) = A0 exp((i delta - Gamma) t); the
    # integrating-factor step makes the linear limit exact
    delta = 3.0 * GAMMA
    point = make_point(3.0, 0.0, alpha=0.0)
    t_end = 10.0 / GAMMA
    cfg = quiet_config(t_end, dt=1e-9)
    traj = integrate(cfg, point, JumpSchedule(initial_state=0), initial_amplitude=1.0 + 0.0j)
    expect = np.exp((1j * delta - GAMMA) * traj.times)
    err = np.abs(traj.amplitudes - expect) / np.abs(expect)
    assert np.max(err) < 1e-6
    # amplitude decays at Gamma, phase advances at delta
    assert abs(traj.photons[-1] - math.exp(-2.0 * GAMMA * t_end)) < 1e-9


def test_linear_drive_response_oracle():
    # eps = 0, alpha = 0, resonant drive B: steady state A = -i sqrt(2 G0) B / (Gamma - i delta)
    b = 2.0e3
    point = make_point(-1.5, 0.0, alpha=0.0)
    cfg = SimulationConfig(dt=1e-9, t_end=12.0 / GAMMA, seed_noise_photons=0.0,
                           pump_ramp=0.0, input_drive=(b, 0.0))
    traj = integrate(cfg, point, JumpSchedule(initial_state=0))
    expect = -1j * math.sqrt(2.0 * point.gamma_ext) * b / (GAMMA - 1j * point.delta_q0)
    assert abs(traj.amplitudes[-1] - expect) / abs(expect) < 1e-3


def test_steady_state_oracle_demo_point():
    # noise-free growth from a small seed settles onto the closed-form root
    point = make_point(0.16, 3.56, beta=7.5e-3)
    d_eff = point.delta_q1 + point.beta * point.epsilon**2 / point.gamma
    n_expect = steady_state_photons(d_eff, point.epsilon, point.alpha, point.gamma).photons
    seed_amp = 0.1 * steady_state_amplitude(d_eff, point.epsilon, point.alpha, point.gamma)
    cfg = quiet_config(4e-6)
    traj = integrate(cfg, point, JumpSchedule(initial_state=1), initial_amplitude=seed_amp)
    assert abs(traj.photons[-1] / n_expect - 1.0) < 0.01


def test_steady_state_oracle_random_points():
    # 20 random points above the instability boundary (zero state unstable,
    # beta = 0): a small seed must grow onto the stable root of the
    # steady-state equation within 1 % relative.  Five additional tristable
    # points (stable zero, red detuned) are seeded inside the high-amplitude
    # basin and must settle onto the same closed-form root.
    rng = np.random.default_rng(42)
    alpha = TWO_PI * 21.6e3
    deltas, epss = [], []
    while len(deltas) < 20:
        x = rng.uniform(-3.0, 3.0)
        e = rng.uniform(1.0, 4.5)
        if e > 1.1 * math.hypot(1.0, x):
            deltas.append(x * GAMMA)
            epss.append(e * GAMMA)
    while len(deltas) < 25:
        x = rng.uniform(-5.0, -2.0)
        e = rng.uniform(1.3, 0.9 * math.hypot(1.0, x))
        if e > 1.3:
            deltas.append(x * GAMMA)
            epss.append(e * GAMMA)
    deltas = np.array(deltas)
    epss = np.array(epss)
    n_pts = deltas.size
    refs = np.array([steady_state_photons(deltas[i], epss[i], alpha, GAMMA).photons
                     for i in range(n_pts)])
    theta = 0.5 * np.arctan2(GAMMA, -np.sqrt(epss**2 - GAMMA**2))
    seed_amp = np.where(np.arange(n_pts) < 20, 0.5, 0.9 * np.sqrt(refs))
    a0 = seed_amp * np.exp(1j * theta)
    cfg = SimulationConfig(dt=1e-9, t_end=10e-6, seed_noise_photons=0.0, pump_ramp=0.0)
    res = integrate_batch(cfg, GAMMA, alpha, 0.0, delta0=deltas, delta1=deltas,
                          epsilon=epss, initial_state=np.zeros(n_pts, dtype=bool),
                          decay_times=np.full(n_pts, np.nan),
                          switch_times=np.full(n_pts, np.nan), latching=True,
                          noise=None, initial_amplitude=a0)
    for i in range(n_pts):
        n_fin = abs(res["final"][i]) ** 2
        assert refs[i] > 0.0
        assert abs(n_fin / refs[i] - 1.0) < 0.01
        # residual of the equation of motion at the settled field
        a = res["final"][i]
        da = 1j * (deltas[i] + alpha * abs(a) ** 2) * a + 1j * epss[i] * np.conj(a) - GAMMA * a
        assert abs(da) / (GAMMA * abs(a)) < 0.02


def test_phase_bistability():
    # opposite-sign seeds settle into steady states a phase pi apart
    point = make_point(0.16, 3.56, beta=7.5e-3)
    cfg = quiet_config(4e-6)
    up = integrate(cfg, point, JumpSchedule(initial_state=1), initial_amplitude=0.3 + 0.4j)
    dn = integrate(cfg, point, JumpSchedule(initial_state=1), initial_amplitude=-0.3 - 0.4j)
    dphi = np.angle(up.amplitudes[-1] / dn.amplitudes[-1])
    assert abs(abs(dphi) - math.pi) < 1e-3
    assert abs(abs(up.amplitudes[-1]) - abs(dn.amplitudes[-1])) < 1e-9


# ---------------------------------------------------------------------------
# integrator properties

def test_determinism_bit_exact():
    point = make_point(0.16, 3.56, beta=7.5e-3)
    cfg = SimulationConfig(dt=1e-9, t_end=600e-9, seed_noise_photons=0.5, rng_seed=77)
    sched = JumpSchedule(initial_state=1, decay_time=330e-9,
                         phase_switch_times=(410e-9,), latching=True)
    t1 = integrate(cfg, point, sched)
    t2 = integrate(cfg, point, sched)
    assert np.array_equal(t1.amplitudes, t2.amplitudes)
    assert np.array_equal(t1.qubit_state_track, t2.qubit_state_track)
    t3 = integrate(SimulationConfig(dt=1e-9, t_end=600e-9, seed_noise_photons=0.5,
                                    rng_seed=78), point, sched)
    assert not np.array_equal(t1.amplitudes, t3.amplitudes)


def test_step_halving_convergence():
    point = make_point(0.16, 3.56, beta=7.5e-3)
    n1 = integrate(quiet_config(2e-6, dt=1e-9), point, JumpSchedule(initial_state=1),
                   initial_amplitude=0.5 + 0.5j).photons[-1]
    n2 = integrate(quiet_config(2e-6, dt=0.5e-9), point, JumpSchedule(initial_state=1),
                   initial_amplitude=0.5 + 0.5j).photons[-1]
    assert abs(n1 / n2 - 1.0) < 1e-3


def test_seed_noise_insensitivity_above_threshold():
    # settled photon number moves by < 1 % when the seed varies fourfold
    point = make_point(0.16, 3.56, beta=7.5e-3)
    out = []
    for n_seed in (0.5, 2.0):
        cfg = SimulationConfig(dt=1e-9, t_end=3e-6, seed_noise_photons=n_seed, rng_seed=5)
        traj = integrate(cfg, point, JumpSchedule(initial_state=1))
        tail = traj.photons[len(traj.photons) // 2:]
        out.append(float(np.mean(tail)))
    assert abs(out[0] / out[1] - 1.0) < 0.01


def test_qubit_state_track_and_events():
    point = make_point(0.16, 3.56)
    cfg = quiet_config(600e-9)
    sched = JumpSchedule(initial_state=1, decay_time=200e-9, latching=True)
    traj = integrate(cfg, point, sched)
    k = np.searchsorted(traj.times, 200e-9)
    assert np.all(traj.qubit_state_track[: k] == 1)
    assert np.all(traj.qubit_state_track[k + 1:] == 0)
    assert ("decay" in [kind for _, kind in traj.events])
    assert np.all(np.diff(traj.times) > 0.0)


def test_event_splitting_off_grid():
    # an event in the middle of a step must land at its exact time, not be
    # quantised to the grid: halving dt barely changes the outcome
    point = make_point(0.16, 3.56)
    sched = JumpSchedule(initial_state=1, decay_time=200.31e-9, latching=False)
    a1 = integrate(quiet_config(400e-9, dt=1e-9), point, sched,
                   initial_amplitude=3.0 + 1.0j).amplitudes[-1]
    a2 = integrate(quiet_config(400e-9, dt=0.5e-9), point, sched,
                   initial_amplitude=3.0 + 1.0j).amplitudes[-1]
    assert abs(a1 - a2) / abs(a2) < 1e-3


def test_latching_keeps_field_up():
    # decay after the field is established: with the full equation of motion
    # the field stays populated (latches); the ringdown mode empties it
    point = make_point(-5.34 + 5.4985, 3.56, beta=7.5e-3,
                       chi=-TWO_PI * 3.629e6)
    # shift so delta_q1 sits near resonance and delta_q0 in the tristable zone
    point = OperatingPoint.from_ground_state_detuning(
        delta_q0=-5.34 * GAMMA, epsilon=3.56 * GAMMA, chi=-TWO_PI * 3.629e6,
        alpha=TWO_PI * 21.6e3, beta=7.5e-3, gamma_ext=TWO_PI * 1.02e6,
        gamma_int=TWO_PI * 0.30e6)
    cfg = quiet_config(1.5e-6)
    latch = integrate(cfg, point, JumpSchedule(initial_state=1, decay_time=800e-9,
                                               latching=True), initial_amplitude=0.5)
    ring = integrate(cfg, point, JumpSchedule(initial_state=1, decay_time=800e-9,
                                              latching=False), initial_amplitude=0.5)
    n_before = latch.photons[np.searchsorted(latch.times, 790e-9)]
    assert latch.photons[-1] > 0.5 * n_before
    assert ring.photons[-1] < 0.01 * n_before


def test_stiffness_guard():
    point = make_point(0.16, 3.56)
    with pytest.raises(SimulationError):
        integrate(SimulationConfig(dt=5e-8, t_end=1e-6), point)


def test_batch_matches_single_shot():
    point = make_point(0.16, 3.56, beta=7.5e-3)
    cfg = SimulationConfig(dt=1e-9, t_end=600e-9, seed_noise_photons=0.5, rng_seed=9)
    n_steps = int(round(cfg.t_end / cfg.dt))
    n_sh = 4
    noise = np.stack([shot_rng(cfg.rng_seed, i).standard_normal((n_steps, 2))
                      for i in range(n_sh)])
    decays = np.array([np.nan, 250e-9, np.nan, 430.6e-9])
    switches = np.array([np.nan, np.nan, 380e-9, np.nan])
    res = integrate_batch(cfg, point.gamma, point.alpha, point.beta,
                          delta0=np.full(n_sh, point.delta_q0),
                          delta1=np.full(n_sh, point.delta_q1),
                          epsilon=point.epsilon,
                          initial_state=np.ones(n_sh, dtype=bool),
                          decay_times=decays, switch_times=switches,
                          latching=True, noise=noise)
    for i in range(n_sh):
        sched = JumpSchedule(
            initial_state=1,
            decay_time=None if math.isnan(decays[i]) else float(decays[i]),
            phase_switch_times=() if math.isnan(switches[i]) else (float(switches[i]),),
            latching=True)
        single = integrate(cfg, point, sched, stream_index=i)
        assert abs(single.amplitudes[-1] - res["final"][i]) <= 1e-9 * max(1.0, abs(single.amplitudes[-1]))


# ---------------------------------------------------------------------------
# region map

def test_map_region_below_threshold_is_noise_floor():
    point = make_point(0.0, 0.5, beta=0.0)
    d = np.linspace(-2.0, 2.0, 4) * GAMMA
    e = np.linspace(0.1, 0.6, 3) * GAMMA
    cfg = SimulationConfig(dt=2e-9, t_end=4e-6, seed_noise_photons=0.5, rng_seed=3)
    reg = map_region(d, e, cfg, point, qubit_state=0)
    assert reg.photons.shape == (3, 4)
    assert np.nanmax(reg.photons) < 5.0  # a few noise photons at most


def test_map_region_boundary_matches_threshold_curve():
    # deterministic seeding gives a crisp onset; compare against the
    # analytic lower boundary on a coarse grid
    from jpo.device import instability_threshold
    point = make_point(0.0, 3.0, beta=7.5e-3)
    n_d, n_e = 20, 16
    d = np.linspace(-4.0, 3.0, n_d) * GAMMA
    e = np.linspace(0.5, 4.0, n_e) * GAMMA
    cfg = SimulationConfig(dt=1e-9, t_end=12e-6, seed_noise_photons=0.5, rng_seed=1)
    reg = map_region(d, e, cfg, point, qubit_state=0, seed_mode="deterministic")
    onset = boundary_onset_indices(reg, threshold_fraction=0.05)
    lo, _ = instability_threshold(d, point.beta, GAMMA)
    de = e[1] - e[0]
    for j in range(n_d):
        expect = np.searchsorted(e - 0.5 * de, lo[j])
        if expect >= n_e:
            assert onset[j] == -1 or onset[j] >= n_e - 1
        else:
            assert onset[j] != -1
            assert abs(onset[j] - expect) <= 1


def test_map_region_two_qubit_state_regions_are_shifted():
    chi = -TWO_PI * 3.629e6
    point = OperatingPoint.from_ground_state_detuning(
        delta_q0=-5.34 * GAMMA, epsilon=3.56 * GAMMA, chi=chi,
        alpha=TWO_PI * 21.6e3, beta=7.5e-3, gamma_ext=TWO_PI * 1.02e6,
        gamma_int=TWO_PI * 0.30e6)
    d = np.linspace(-8.0, 3.0, 23) * GAMMA
    e = np.array([3.0, 3.56]) * GAMMA
    cfg = SimulationConfig(dt=1e-9, t_end=6e-6, seed_noise_photons=0.5, rng_seed=2)
    reg0 = map_region(d, e, cfg, point, qubit_state=0, seed_mode="deterministic")
    reg1 = map_region(d, e, cfg, point, qubit_state=1, seed_mode="deterministic")
    thr = 0.05 * max(np.nanmax(reg0.photons), np.nanmax(reg1.photons))
    on0 = reg0.photons[1] > thr
    on1 = reg1.photons[1] > thr
    c0 = np.mean(d[on0]) / GAMMA
    c1 = np.mean(d[on1]) / GAMMA
    # the excited-state region sits 2|chi| to the red of the ground-state one
    assert c1 < c0
    assert (c0 - c1) * GAMMA == pytest.approx(-2.0 * chi, rel=0.25)


def test_map_region_validates_grid():
    point = make_point(0.0, 2.0)
    with pytest.raises(ValueError):
        map_region(np.array([0.0]), np.array([1.0, 2.0]) * GAMMA,
                   SimulationConfig(), point)


# ---------------------------------------------------------------------------
# latch detection

def test_detect_latch_below_threshold_never():
    point = make_point(0.0, 0.5)
    cfg = SimulationConfig(dt=1e-9, t_end=2e-6, seed_noise_photons=0.5, rng_seed=1)
    traj = integrate(cfg, point, JumpSchedule(initial_state=0))
    assert detect_latch(traj, point) is None


def test_detect_latch_above_threshold():
    point = make_point(0.16, 3.56, beta=7.5e-3)
    cfg = SimulationConfig(dt=1e-9, t_end=2e-6, seed_noise_photons=0.5, rng_seed=12)
    traj = integrate(cfg, point, JumpSchedule(initial_state=1))
    t_latch = detect_latch(traj, point)
    assert t_latch is not None
    # buildup completes within a few inverse damping times, well before the
    # 300 ns sampling delay plus margin
    assert t_latch < 400e-9


def test_detect_latch_decay_race_flips_outcome():
    point = OperatingPoint.from_ground_state_detuning(
        delta_q0=-5.34 * GAMMA, epsilon=3.56 * GAMMA, chi=-TWO_PI * 3.629e6,
        alpha=TWO_PI * 21.6e3, beta=7.5e-3, gamma_ext=TWO_PI * 1.02e6,
        gamma_int=TWO_PI * 0.30e6)
    cfg = SimulationConfig(dt=1e-9, t_end=2e-6, seed_noise_photons=0.5, rng_seed=8)
    free = integrate(cfg, point, JumpSchedule(initial_state=1))
    t_latch = detect_latch(free, point)
    assert t_latch is not None
    early = integrate(cfg, point, JumpSchedule(initial_state=1, decay_time=0.2 * t_latch,
                                               latching=True))
    late = integrate(cfg, point, JumpSchedule(initial_state=1, decay_time=t_latch + 300e-9,
                                              latching=True))
    assert early.photons[-1] < 5.0
    assert late.photons[-1] > 50.0


def test_detect_latch_validates_fraction():
    point = make_point(0.16, 3.56)
    traj = Trajectory(times=np.array([0.0, 1e-9]), amplitudes=np.zeros(2, dtype=complex),
                      qubit_state_track=np.zeros(2, dtype=np.uint8))
    with pytest.raises(ValueError):
        detect_latch(traj, point, photon_threshold=1.5)
