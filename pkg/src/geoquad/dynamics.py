"""Unitary and Lindblad time evolution under a pulse schedule.

Every step is the exact exponential of a generator frozen over
``[t_k, t_k + dt]``, so each step is exactly unitary (Schrodinger) or exactly
trace preserving (Lindblad) up to rounding. Two step rules are available:

``"midpoint"``
    generator taken at ``eps(t_k + dt/2)``; second order.
``"magnus4"`` (default)
    fourth-order Magnus step from the two Gauss points
    ``t_k + (1/2 -+ sqrt(3)/6) dt`` with the commutator correction
    ``sqrt(3)/12 dt^2 [A_2, A_1]``.
"""

from dataclasses import dataclass
import logging
import math

import numpy as np

from .exceptions import InvalidT2, NotHermitian, PositivityViolation, ShapeMismatch
from .linalg import expm_taylor, expm_unitary, fix_gauge, unvec_row, vec_row
from .validation import check_density_matrix, check_hermitian, check_state_vector

logger = logging.getLogger(__name__)

DEFAULT_STEPS = 20000
HERMITICITY_LIMIT = 1e-6
POSITIVITY_LIMIT = -1e-6
_CHUNK = 2048


@dataclass(frozen=True)
class JumpOperator:
    matrix: np.ndarray
    label: str = ""

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ShapeMismatch("jump operators must be square")
        if not np.all(np.isfinite(m)):
            raise ValueError("jump operator has non-finite entries")
        object.__setattr__(self, "matrix", m)


@dataclass(frozen=True)
class Trajectory:
    """Sampled states: vectors ``(n, d)`` or density matrices ``(n, d, d)``."""

    t: np.ndarray
    states: np.ndarray

    @property
    def final(self):
        return self.states[-1]

    def populations(self):
        if self.states.ndim == 2:
            return np.abs(self.states) ** 2
        return np.real(np.diagonal(self.states, axis1=1, axis2=2))


METHODS = ("magnus4", "midpoint")
_GAUSS = math.sqrt(3) / 6


def _sample_points(schedule, steps, method):
    """Detuning at the quadrature nodes of every step, shape ``(steps, k)``."""
    if steps < 2:
        raise ValueError("steps must be at least 2")
    if method not in METHODS:
        raise ValueError(f"unknown step rule {method!r}")
    dt = schedule.t_f / steps
    start = np.arange(steps) * dt
    offsets = [0.5] if method == "midpoint" else [0.5 - _GAUSS, 0.5 + _GAUSS]
    pts = np.stack([schedule(start + o * dt) for o in offsets], axis=1)
    return dt, np.asarray(pts, dtype=float)


def _step_generators(model, pts, dt, diss=None):
    """Unique step exponents ``X_k`` (one per distinct row of ``pts``) and the index map.

    Without ``diss`` the result is a Hermitian ``K`` with step ``exp(-i K)``;
    with ``diss`` it is the Liouvillian exponent itself.
    """
    uniq, inverse = np.unique(pts, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    hs = [model.h_batch(uniq[:, j]) for j in range(uniq.shape[1])]
    if diss is None:
        if len(hs) == 1:
            return hs[0] * dt, inverse
        h1, h2 = hs
        comm = h2 @ h1 - h1 @ h2
        return 0.5 * dt * (h1 + h2) - 1j * (math.sqrt(3) / 12) * dt**2 * comm, inverse
    ls = [_commutator_super(h) + diss for h in hs]
    if len(ls) == 1:
        return ls[0] * dt, inverse
    l1, l2 = ls
    return 0.5 * dt * (l1 + l2) + (math.sqrt(3) / 12) * dt**2 * (l2 @ l1 - l1 @ l2), inverse


def _ordered_product(mats):
    """``mats[n-1] @ ... @ mats[0]`` by pairwise reduction."""
    mats = np.asarray(mats)
    while len(mats) > 1:
        if len(mats) % 2:
            tail = mats[-1:]
            mats = mats[:-1]
        else:
            tail = None
        mats = mats[1::2] @ mats[0::2]
        if tail is not None:
            mats = np.concatenate([mats, tail])
    return mats[0]


def instantaneous_state(model, eps, level=0):
    """Gauge-fixed eigenvector ``level`` of ``H(eps)``."""
    evals, evecs = np.linalg.eigh(check_hermitian(model.h_at(eps)))
    return fix_gauge(evecs)[:, level]


def _unitary_steps(model, pts, dt):
    gens, inverse = _step_generators(model, pts, dt)
    return expm_unitary(gens, 1.0), inverse


def propagate_schrodinger(model, schedule, psi0, steps=DEFAULT_STEPS, trajectory=True,
                          method="magnus4"):
    """Evolve ``psi0`` under ``H(eps(t))``.

    Returns a :class:`Trajectory` with ``steps + 1`` samples, or only the
    final state when ``trajectory`` is false (computed by pairwise products
    of the step propagators).
    """
    psi0 = check_state_vector(psi0, model.dim)
    dt, pts = _sample_points(schedule, steps, method)
    times = np.linspace(0.0, schedule.t_f, steps + 1)
    if not trajectory:
        psi = psi0.copy()
        for lo in range(0, steps, _CHUNK):
            props, inv = _unitary_steps(model, pts[lo : lo + _CHUNK], dt)
            psi = _ordered_product(props[inv]) @ psi
        return _renormalized(psi)
    props, inv = _unitary_steps(model, pts, dt)
    states = np.empty((steps + 1, model.dim), dtype=complex)
    states[0] = psi = psi0
    for k in range(steps):
        psi = props[inv[k]] @ psi
        states[k + 1] = psi
    states[-1] = _renormalized(psi)
    return Trajectory(times, states)


def _renormalized(psi):
    norm = np.linalg.norm(psi)
    drift = abs(norm - 1.0)
    if drift > 1e-12:
        logger.debug("norm drift %.3e renormalized", drift)
    return psi / norm


def transfer_probability(model, schedule, level=0, steps=DEFAULT_STEPS, method="magnus4"):
    """``|<psi_level(eps_f)|U|psi_level(eps0)>|^2`` for the followed eigenstate."""
    psi0 = instantaneous_state(model, schedule(0.0), level)
    psi = propagate_schrodinger(model, schedule, psi0, steps, trajectory=False, method=method)
    target = instantaneous_state(model, schedule(schedule.t_f), level)
    return float(min(1.0, abs(np.vdot(target, psi)) ** 2))


def dephasing_jump(t2, variant="A", dim=3, index=0):
    """Charge dephasing on level ``index`` (the S(2,0) state in the 3-level model).

    Variant ``"A"`` is ``sqrt(1/(2 T2)) (2 P - 1)``, variant ``"B"`` the
    identity-shifted ``sqrt(2/T2) P`` with ``P`` the projector on ``index``.
    ``t2 = inf`` gives the zero operator.
    """
    t2 = float(t2)
    if not t2 > 0 or math.isnan(t2):
        raise InvalidT2(f"T2 must be positive, got {t2!r}")
    proj = np.zeros((dim, dim), dtype=complex)
    proj[index, index] = 1.0
    if variant == "A":
        return JumpOperator(math.sqrt(0.5 / t2) * (2 * proj - np.eye(dim)), f"dephasing_A(T2={t2:g})")
    if variant == "B":
        return JumpOperator(math.sqrt(2.0 / t2) * proj, f"dephasing_B(T2={t2:g})")
    raise ValueError(f"unknown dephasing variant {variant!r}")


def _as_matrices(jumps, dim):
    mats = []
    for j in jumps:
        m = j.matrix if isinstance(j, JumpOperator) else np.asarray(j, dtype=complex)
        if m.shape != (dim, dim):
            raise ShapeMismatch(f"jump operator shape {m.shape} does not match dimension {dim}")
        mats.append(m)
    return mats


def dissipator(jumps, dim):
    """``sum_j L (x) L* - (L^dag L (x) 1 + 1 (x) (L^dag L)^T) / 2`` under row vectorization."""
    eye = np.eye(dim)
    out = np.zeros((dim * dim, dim * dim), dtype=complex)
    for m in _as_matrices(jumps, dim):
        ll = m.conj().T @ m
        out += np.kron(m, m.conj()) - 0.5 * (np.kron(ll, eye) + np.kron(eye, ll.T))
    return out


def _commutator_super(hs):
    """``-i (H (x) 1 - 1 (x) H^T)`` for a stack of Hamiltonians."""
    n, d, _ = hs.shape
    eye = np.eye(d)
    left = np.einsum("nij,kl->nikjl", hs, eye)
    right = np.einsum("ij,nlk->nikjl", eye, hs)
    return -1j * (left - right).reshape(n, d * d, d * d)


def lindblad_superoperator(h, jumps=()):
    """Row-vectorized Lindbladian for one Hamiltonian or a stack of them."""
    h = check_hermitian(h)
    single = h.ndim == 2
    hs = h[None] if single else h
    sup = _commutator_super(hs) + dissipator(jumps, hs.shape[-1])
    return sup[0] if single else sup


def lindblad_rhs(h, jumps, rho):
    """Direct evaluation of ``-i[H, rho] + sum_j (L rho L^dag - {L^dag L, rho}/2)``."""
    out = -1j * (h @ rho - rho @ h)
    for m in _as_matrices(jumps, h.shape[0]):
        ll = m.conj().T @ m
        out += m @ rho @ m.conj().T - 0.5 * (ll @ rho + rho @ ll)
    return out


def _lindblad_steps(model, pts, diss, dt):
    gens, inverse = _step_generators(model, pts, dt, diss)
    return expm_taylor(gens), inverse


def propagate_lindblad(model, schedule, jumps, rho0, steps=DEFAULT_STEPS, trajectory=True,
                       method="magnus4"):
    """Evolve a density matrix under the Lindblad equation along ``schedule``.

    The density matrix is re-symmetrized after every step (or once at the end
    when only the final state is requested). Raises
    :class:`PositivityViolation` if an eigenvalue drops below ``-1e-6``.
    """
    d = model.dim
    rho0 = check_density_matrix(rho0, d)
    diss = dissipator(jumps, d)
    dt, pts = _sample_points(schedule, steps, method)
    perm = np.arange(d * d).reshape(d, d).T.reshape(-1)
    drift = 0.0
    if not trajectory:
        v = vec_row(rho0)
        for lo in range(0, steps, _CHUNK):
            props, inv = _lindblad_steps(model, pts[lo : lo + _CHUNK], diss, dt)
            v = _ordered_product(props[inv]) @ v
        drift = float(np.max(np.abs(v - v[perm].conj())))
        rho = _finish(unvec_row(v), drift)
        return rho
    times = np.linspace(0.0, schedule.t_f, steps + 1)
    states = np.empty((steps + 1, d, d), dtype=complex)
    states[0] = rho0
    v = vec_row(rho0)
    for lo in range(0, steps, _CHUNK):
        props, inv = _lindblad_steps(model, pts[lo : lo + _CHUNK], diss, dt)
        for k, i in enumerate(inv):
            v = props[i] @ v
            herm = v[perm].conj()
            drift = max(drift, float(np.max(np.abs(v - herm))))
            v = 0.5 * (v + herm)
            states[lo + k + 1] = v.reshape(d, d)
    states[-1] = _finish(states[-1], drift)
    return Trajectory(times, states)


def _finish(rho, drift):
    if drift > HERMITICITY_LIMIT:
        raise NotHermitian(f"Hermiticity drift {drift:.3e} exceeds {HERMITICITY_LIMIT}")
    if drift > 1e-12:
        logger.debug("Hermiticity drift %.3e symmetrized", drift)
    rho = 0.5 * (rho + rho.conj().T)
    lo = np.linalg.eigvalsh(rho)[0]
    if lo < POSITIVITY_LIMIT:
        raise PositivityViolation(f"density matrix eigenvalue {lo:.3e} below {POSITIVITY_LIMIT}")
    return rho


def _psd_sqrt(m):
    evals, evecs = np.linalg.eigh(0.5 * (m + m.conj().T))
    return (evecs * np.sqrt(np.clip(evals, 0.0, None))) @ evecs.conj().T


def uhlmann_fidelity(rho, sigma):
    """``(tr sqrt(sqrt(rho) sigma sqrt(rho)))^2``.

    ``sigma`` may be a state vector or a rank-1 density matrix, in which case
    the fidelity reduces to ``<psi|rho|psi>``.
    """
    rho = np.asarray(rho, dtype=complex)
    sigma = np.asarray(sigma, dtype=complex)
    if sigma.ndim == 1:
        return float(np.clip(np.vdot(sigma, rho @ sigma).real, 0.0, 1.0))
    if rho.shape != sigma.shape:
        raise ShapeMismatch(f"shapes {rho.shape} and {sigma.shape} differ")
    evals, evecs = np.linalg.eigh(0.5 * (sigma + sigma.conj().T))
    if evals[-1] > 1 - 1e-12 and np.all(np.abs(evals[:-1]) < 1e-12):
        return uhlmann_fidelity(rho, evecs[:, -1])
    return uhlmann_fidelity_general(rho, sigma)


def uhlmann_fidelity_general(rho, sigma):
    root = _psd_sqrt(np.asarray(rho, dtype=complex))
    inner = root @ np.asarray(sigma, dtype=complex) @ root
    evals = np.linalg.eigvalsh(0.5 * (inner + inner.conj().T))
    return float(np.clip(np.sum(np.sqrt(np.clip(evals, 0.0, None))) ** 2, 0.0, 1.0))


def lindblad_fidelity(model, schedule, jumps, level=0, steps=DEFAULT_STEPS, method="magnus4"):
    """Uhlmann fidelity of the final Lindblad state with the instantaneous eigenstate."""
    psi0 = instantaneous_state(model, schedule(0.0), level)
    rho = propagate_lindblad(model, schedule, jumps, np.outer(psi0, psi0.conj()), steps,
                             trajectory=False, method=method)
    target = instantaneous_state(model, schedule(schedule.t_f), level)
    return uhlmann_fidelity(rho, target)
