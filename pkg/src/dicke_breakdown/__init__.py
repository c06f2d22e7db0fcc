"""Open Dicke model: superradiance and cooperative breakdown of the
oscillator blockade.

Submodules
----------
model      parameters and closed-form couplings
cumulant   second-order moment equations, steady states, trajectories
liouville  permutation-symmetric Lindblad solver and cutoff studies
spectral   dressed-state detuning and effective heating rate
ionmap     trapped-ion laser settings <-> model parameters
sweep      phase-diagram sweeps
cli        command-line interface
"""

from .model import (
    ModelParams,
    ParameterError,
    breakdown_coupling,
    critical_coupling_spt,
    derived_frequencies,
    validate_params,
)

__all__ = [
    "ModelParams",
    "ParameterError",
    "breakdown_coupling",
    "critical_coupling_spt",
    "derived_frequencies",
    "validate_params",
]

__version__ = "0.1.0"
