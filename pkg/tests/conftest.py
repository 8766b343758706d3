import math

import pytest

from jpo.device import DeviceParameters, OperatingPoint, QubitParameters

TWO_PI = 2.0 * math.pi


@pytest.fixture
def device():
    """Device constants of the demonstration sample."""
    return DeviceParameters(
        ej=TWO_PI * 9.82e9,
        ec=TWO_PI * 453e6,
        g01=TWO_PI * 46e6,
        omega_bare=TWO_PI * 5.55e9,
        participation=0.053,
        gamma_ext=TWO_PI * 1.02e6,
        gamma_int=TWO_PI * 0.30e6,
    )


@pytest.fixture
def qubit():
    return QubitParameters(t1=4.24e-6, t2_star=1.66e-6, temperature=0.045,
                           omega=TWO_PI * 4.885e9)


@pytest.fixture
def operating_point():
    """Demonstration pump bias: ground-state branch at delta/Gamma = -5.34, eps/Gamma = 3.56."""
    gamma = TWO_PI * 1.32e6
    return OperatingPoint.from_ground_state_detuning(
        delta_q0=-5.34 * gamma,
        epsilon=3.56 * gamma,
        chi=-TWO_PI * 3.629e6,
        alpha=TWO_PI * 21.6e3,
        beta=7.5e-3,
        gamma_ext=TWO_PI * 1.02e6,
        gamma_int=TWO_PI * 0.30e6,
        flux=0.185 * math.pi,
    )
