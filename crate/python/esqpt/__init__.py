"""Exact-diagonalization laboratory for the conserved-charge diagnostic of
excited-state phases in the Rabi and Dicke models (double-precision tier).

Everything heavy lives in the Rust extension: build `Params`, diagonalize
into a `Spectrum`, construct the `Charge` operator sign(a' + a), then drive
microcanonical windows, quench states, the stroboscopic variance protocol,
and long-time averages.
"""

from ._native import (
    Charge,
    Params,
    Spectrum,
    State,
    __version__,
    charge_expectation,
    charge_operator,
    diagonalize,
    energy,
    hamiltonian,
    long_time_average,
    microcanonical,
    parity_expectation,
    parity_signs,
    quench_state,
    variance_protocol,
)

__all__ = [
    "Charge",
    "Params",
    "Spectrum",
    "State",
    "__version__",
    "charge_expectation",
    "charge_operator",
    "diagonalize",
    "energy",
    "hamiltonian",
    "long_time_average",
    "microcanonical",
    "parity_expectation",
    "parity_signs",
    "quench_state",
    "variance_protocol",
]
