"""Geometric pulse shaping for quasi-adiabatic state transfer.

Pulses are built from the quantum metric of a parametric Hamiltonian so
that the adiabaticity stays constant along the sweep, then checked by
unitary or Lindblad time evolution.
"""

__version__ = "0.1.0"

from .exceptions import (
    ConfigError,
    ConvergenceFailure,
    DegenerateSpectrum,
    EndpointMiss,
    ExpansionInvalid,
    GeoQuadError,
    InvalidT2,
    NotHermitian,
    PositivityViolation,
    QuadratureFailure,
    ShapeMismatch,
)
from .linalg import EigenSystem, eigensystem, expm_taylor, expm_unitary
from .models import (
    AffineHamiltonian,
    DQDParams,
    PauliHamiltonian,
    TruncatedHamiltonian,
    build_model,
    dqd3_model,
    dqd6_model,
    pauli_model,
    sw2_model,
    truncate_two_level,
)
from .metric import GeoTensor, QuantumMetric, qgt_fd_oracle, qgt_spectral, qgt_tangent
from .pulse import (
    AnalyticTwoLevelPulse,
    GeometricPulse,
    LinearPulse,
    PulseSchedule,
    SWClosedFormPulse,
    make_pulse,
    solve_fast_quad,
)
from .dynamics import (
    JumpOperator,
    dephasing_jump,
    lindblad_fidelity,
    propagate_lindblad,
    propagate_schrodinger,
    transfer_probability,
    uhlmann_fidelity,
)
from .noise import MiscalibrationSpec, QuasistaticSpec, miscalibration_run, quasistatic_run
