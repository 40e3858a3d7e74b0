"""Quasistatic detuning noise and pulse-miscalibration studies.

Quasistatic noise is a detuning offset ``d_eps`` that is constant during one
pulse. It is modelled by moving both boundary values of the pulse by
``d_eps`` and re-synthesizing the pulse between the shifted boundaries, then
evolving under the unshifted system Hamiltonian. Sampled offsets come from a
Philox counter-based generator with one stream per ``(seed, sample)`` pair;
Gaussian variates use the Box-Muller transform so the streams are fully
specified by this module.
"""

from dataclasses import dataclass, field
import math

import numpy as np

from .dynamics import DEFAULT_STEPS, transfer_probability
from .models import DQDParams, dqd3_model
from .pulse import DEFAULT_SAMPLES, make_pulse


def sample_stream(seed, index):
    """Independent Philox generator for sample ``index`` of run ``seed``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(index)])))


def box_muller(rng, n):
    """``n`` standard normal variates from pairs of uniforms in (0, 1]."""
    m = (n + 1) // 2
    u1 = 1.0 - rng.random(m)
    u2 = rng.random(m)
    r = np.sqrt(-2.0 * np.log(u1))
    z = np.concatenate([r * np.cos(2 * np.pi * u2), r * np.sin(2 * np.pi * u2)])
    return z[:n]


@dataclass(frozen=True)
class QuasistaticSpec:
    """Detuning offsets: either an explicit list or ``n_samples`` Gaussian draws."""

    sigma: float = 0.0
    n_samples: int = 1
    seed: int = 0
    fixed_offsets: tuple = None

    def __post_init__(self):
        if self.sigma < 0 or not math.isfinite(self.sigma):
            raise ValueError("sigma must be finite and non-negative")
        if self.fixed_offsets is None and self.n_samples < 1:
            raise ValueError("n_samples must be at least 1")

    def offsets(self):
        if self.fixed_offsets is not None:
            return np.asarray(self.fixed_offsets, dtype=float)
        return np.array([self.sigma * box_muller(sample_stream(self.seed, i), 1)[0]
                         for i in range(self.n_samples)])


@dataclass
class QuasistaticResult:
    offsets: np.ndarray
    fidelity: np.ndarray
    noiseless: float
    stats: dict = field(default_factory=dict)

    @property
    def deviation(self):
        return self.fidelity - self.noiseless


def quasistatic_run(model, protocol, t_f, spec, eps0, eps_f, level=0, steps=DEFAULT_STEPS,
                    n_samples=DEFAULT_SAMPLES, mode="resynthesize"):
    """Fidelity under shifted pulse boundaries ``eps_{0,f} -> eps_{0,f} + d_eps``.

    ``mode="resynthesize"`` solves the pulse again between the shifted
    boundaries. ``mode="additive"`` keeps the nominal pulse and evolves
    under ``H(eps) + d_eps dH/deps``; for models affine in the detuning
    (all double-dot models) that is the nominal pulse translated by
    ``d_eps``, which is how it is computed. A zero offset
    reuses the noiseless pulse, so it reproduces the noiseless fidelity
    exactly.
    """
    if mode not in ("resynthesize", "additive"):
        raise ValueError(f"unknown mode {mode!r}")
    nominal = make_pulse(protocol, model, eps0, eps_f, t_f, level, n_samples)
    f0 = transfer_probability(model, nominal, level, steps)
    offsets = spec.offsets()
    fids = np.empty(len(offsets))
    for i, d in enumerate(offsets):
        if d == 0:
            sched = nominal
        elif mode == "additive":
            sched = nominal.shifted(d)
        else:
            sched = make_pulse(protocol, model, eps0 + d, eps_f + d, t_f, level, n_samples)
        fids[i] = transfer_probability(model, sched, level, steps)
    dev = fids - f0
    stats = {
        "max_abs_deviation": float(np.max(np.abs(dev))) if len(dev) else 0.0,
        "mean_deviation": float(np.mean(dev)) if len(dev) else 0.0,
        "noiseless_fidelity": float(f0),
    }
    return QuasistaticResult(offsets, fids, f0, stats)


@dataclass(frozen=True)
class MiscalibrationSpec:
    """System tunnel coupling and the offsets assumed when designing the pulse."""

    omega_system: float
    delta_omega_list: tuple
    de_z: float = 0.5
    u_tilde: float = 100.0

    def __post_init__(self):
        for d in self.delta_omega_list:
            if not self.omega_system + d > 0:
                raise ValueError(f"omega_system + delta_omega must be positive (got {d})")


def miscalibration_run(spec, t_f_list, eps0=200.0, eps_f=0.0, level=0, steps=DEFAULT_STEPS,
                       n_samples=DEFAULT_SAMPLES, angular_factor=1.0):
    """Fidelity deviation grid of shape ``(len(t_f_list), len(delta_omega_list))``.

    For each pulse time the geometric pulse is designed for the 3-level model
    with ``omega_system + delta_omega`` and applied to the model with
    ``omega_system``; the deviation is relative to the calibrated pulse.
    """
    from .models import scale_model

    def model_for(omega):
        return scale_model(dqd3_model(DQDParams(spec.u_tilde, omega, spec.de_z)), angular_factor)

    system = model_for(spec.omega_system)
    out = np.empty((len(t_f_list), len(spec.delta_omega_list)))
    for i, t_f in enumerate(t_f_list):
        calibrated = make_pulse("geometric", system, eps0, eps_f, t_f, level, n_samples)
        f0 = transfer_probability(system, calibrated, level, steps)
        for j, d in enumerate(spec.delta_omega_list):
            if d == 0:
                out[i, j] = 0.0
                continue
            pulse = make_pulse("geometric", model_for(spec.omega_system + d), eps0, eps_f,
                               t_f, level, n_samples)
            out[i, j] = transfer_probability(system, pulse, level, steps) - f0
    return out
