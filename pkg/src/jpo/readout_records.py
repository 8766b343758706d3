"""Record layout of one simulated readout cycle.

A records array is structured with one row per shot:

    shot_index      u8   index within its prepared-state ensemble
    prepared_state  u1   0 or 1 (intended preparation)
    initial_state   u1   qubit state at pump-on, after faults
    fault_flags     u1   bitmask, see below
    decay_time      f8   relaxation instant relative to pump-on (NaN: none)
    v_i, v_q        f8   window-mean quadrature voltages
    v_rect          f8   window mean of the per-sample magnitude |V|

Fault flag bits: 1 preparation fault, 2 thermal excitation, 4 relaxation
within the exposure window, 8 phase switch during the sampling window.
"""

import numpy as np

FLAG_PREP_FAULT = 1
FLAG_THERMAL = 2
FLAG_DECAYED = 4
FLAG_SWITCHED = 8

RECORD_DTYPE = np.dtype([
    ("shot_index", np.uint64),
    ("prepared_state", np.uint8),
    ("initial_state", np.uint8),
    ("fault_flags", np.uint8),
    ("decay_time", np.float64),
    ("v_i", np.float64),
    ("v_q", np.float64),
    ("v_rect", np.float64),
])
