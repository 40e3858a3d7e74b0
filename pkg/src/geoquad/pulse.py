"""Pulse synthesis: linear ramps, analytic two-level geodesics and fast-QUAD pulses.

The single-parameter fast-QUAD condition ``rate(eps) * |d eps/dt| = delta``
is separable. It is integrated in its hodograph form ``dt/d eps = rate/delta``
with the classical fourth-order Runge-Kutta scheme, which for a right-hand
side independent of ``t`` reduces to Simpson's rule on each step. Every
stage is independent, so all metric evaluations are batched.
"""

from dataclasses import dataclass, field
import logging
import math
import warnings

import numpy as np
from scipy import integrate
from scipy.interpolate import PchipInterpolator
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .exceptions import EndpointMiss, ExpansionInvalid, QuadratureFailure
from .metric import _check_gap, metric_curve
from .validation import check_positive

logger = logging.getLogger(__name__)

PROTOCOLS = ("linear", "geometric", "historical", "sw_closed_form", "analytic_two_level", "sampled")
DEFAULT_SAMPLES = 20001
ENDPOINT_RTOL = 1e-4
CLAMP_FRACTION = 1e-3


@dataclass(eq=False)
class PulseSchedule:
    """A sampled control path ``eps(t)`` on ``[0, t_f]``.

    Between samples the path is a monotone cubic (PCHIP) interpolant unless
    an exact ``func`` is attached, in which case that is used.
    """

    t: np.ndarray
    eps: np.ndarray
    t_f: float
    eps0: float
    eps_f: float
    delta: float
    protocol: str
    metadata: dict = field(default_factory=dict)
    func: object = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.eps = np.asarray(self.eps, dtype=float)
        if self.protocol not in PROTOCOLS:
            raise ValueError(f"unknown protocol {self.protocol!r}")
        if self.t.ndim != 1 or self.t.shape != self.eps.shape or len(self.t) < 2:
            raise ValueError("t and eps must be 1-d arrays of equal length >= 2")
        if np.any(np.diff(self.t) <= 0):
            raise ValueError("sample times must be strictly increasing")
        span = abs(self.eps_f - self.eps0)
        tol = 1e-6 * span
        if abs(self.eps[0] - self.eps0) > tol or abs(self.eps[-1] - self.eps_f) > tol:
            raise ValueError("schedule does not meet its boundary values")
        sign = np.sign(self.eps_f - self.eps0)
        if np.any(sign * np.diff(self.eps) < -1e-12 * max(span, 1.0)):
            raise ValueError("schedule is not monotone between its boundaries")
        self._interp = None

    def _interpolant(self):
        if self._interp is None:
            self._interp = PchipInterpolator(self.t, self.eps, extrapolate=False)
        return self._interp

    def __call__(self, t):
        t = np.clip(np.asarray(t, dtype=float), 0.0, self.t_f)
        if self.func is not None:
            return self.func(t)
        out = self._interpolant()(t)
        # the last polynomial piece reproduces eps_f only up to rounding
        return np.where(t == self.t_f, self.eps[-1], out)

    def derivative(self, t):
        return self._interpolant().derivative()(np.clip(np.asarray(t, dtype=float), 0.0, self.t_f))

    def shifted(self, offset):
        """Same shape with both boundary values moved by ``offset``."""
        func = None if self.func is None else (lambda t, f=self.func: f(t) + offset)
        meta = dict(self.metadata, shifted_by=float(offset))
        return PulseSchedule(self.t, self.eps + offset, self.t_f, self.eps0 + offset,
                             self.eps_f + offset, self.delta, self.protocol, meta, func)

    def reversed(self):
        """Time mirror ``eps(t_f - t)``: a readout pulse from an initialization pulse."""
        t = self.t_f - self.t[::-1]
        t[0] = 0.0
        func = None if self.func is None else (lambda s, f=self.func, tf=self.t_f: f(tf - s))
        return PulseSchedule(t, self.eps[::-1].copy(), self.t_f, self.eps_f, self.eps0,
                             self.delta, self.protocol, dict(self.metadata), func)

    def killing_charge(self, model, level=0):
        """``g(eps(t)) * (d eps/dt)^2`` at interior samples.

        The velocity is the second-order finite difference of the samples,
        independent of how they were generated.
        """
        vel = np.gradient(self.eps, self.t, edge_order=2)
        g = metric_curve(model, self.eps[1:-1], level)
        return g * vel[1:-1] ** 2


def linear_pulse(eps0, eps_f, t_f):
    """Straight ramp ``eps(t) = eps0 + (eps_f - eps0) t / t_f``."""
    t_f = check_positive(t_f, "t_f")
    slope = (eps_f - eps0) / t_f
    func = lambda t: eps0 + slope * np.asarray(t, dtype=float)  # noqa: E731
    return PulseSchedule([0.0, t_f], [eps0, eps_f], t_f, eps0, eps_f,
                         delta=float("nan"), protocol="linear", func=func)


def sampled_pulse(t, eps):
    """Schedule from externally supplied samples, starting at ``t = 0``."""
    t = np.asarray(t, dtype=float)
    eps = np.asarray(eps, dtype=float)
    if len(t) < 2 or t[0] != 0.0:
        raise ValueError("sampled pulses need at least two samples starting at t = 0")
    return PulseSchedule(t, eps, float(t[-1]), float(eps[0]), float(eps[-1]), float("nan"), "sampled")


def analytic_two_level(theta0, theta_f, t_f):
    """Bloch-sphere geodesic: the polar angle varies linearly in time.

    The returned schedule is in the ``theta`` coordinate. With the metric
    component 1/4 the adiabaticity is ``|theta_f - theta0| / (2 t_f)``.
    """
    sched = linear_pulse(theta0, theta_f, t_f)
    sched.protocol = "analytic_two_level"
    sched.delta = abs(theta_f - theta0) / (2 * t_f)
    return sched


def analytic_pauli_pulse(rho0, rho_f, z, t_f):
    """The Bloch geodesic mapped back to ``rho(t) = z tan(theta(t))``.

    ``theta = arctan2(rho, z)``; valid for ``z > 0``.
    """
    if z <= 0:
        raise ValueError("z must be positive")
    th0, thf = math.atan2(rho0, z), math.atan2(rho_f, z)
    t_f = check_positive(t_f, "t_f")

    def func(t):
        return z * np.tan(th0 + (thf - th0) * np.asarray(t, dtype=float) / t_f)

    t = np.linspace(0.0, t_f, 2001)
    eps = func(t)
    eps[0], eps[-1] = rho0, rho_f
    return PulseSchedule(t, eps, t_f, rho0, rho_f, abs(thf - th0) / (2 * t_f),
                         "analytic_two_level", {"z": z, "theta0": th0, "theta_f": thf}, func)


def _fast_quad_rate(model, level, variant):
    if variant == "geometric":
        return lambda eps: np.sqrt(metric_curve(model, eps, level))
    if variant == "historical":
        return lambda eps: _historical_rate(model, eps, level)
    raise ValueError(f"unknown fast-QUAD variant {variant!r}")


def _historical_rate(model, eps, level):
    """``sum_n |<l|dH|n>| / (E_n - E_l)^2``: the pre-geometric fast-QUAD weight."""
    eps = np.asarray(eps, dtype=float).reshape(-1)
    evals, evecs = np.linalg.eigh(model.h_batch(eps))
    _check_gap(evals, level)
    dh = model.dh_batch(eps, 0)
    c = np.einsum("nim,nij,nj->nm", evecs.conj(), dh, evecs[:, :, level])
    denom = evals - evals[:, level : level + 1]
    denom[:, level] = np.inf
    return np.sum(np.abs(c) / denom**2, axis=1)


def _local_maxima(x, y):
    inner = (y[1:-1] > y[:-2]) & (y[1:-1] >= y[2:]) & (y[1:-1] > 1e-3 * np.max(y))
    return x[1:-1][inner]


def _integrate_length(rate, lo, hi, breakpoints, rtol=1e-8):
    """Adaptive quadrature of ``rate`` over ``[lo, hi]``; returns (value, error)."""
    def f(e):
        return float(rate(np.array([e]))[0])
    pts = [p for p in breakpoints if lo < p < hi]
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            val, err = integrate.quad(f, lo, hi, points=pts or None, epsabs=0.0,
                                      epsrel=rtol, limit=500)
        except integrate.IntegrationWarning as exc:
            raise QuadratureFailure(str(exc)) from exc
    return val, err


def _node_grid(rate, eps0, eps_f, n_nodes, n_coarse):
    """Nodes uniform in a blend of detuning and arclength.

    Half of the resolution follows ``eps`` and half follows the accumulated
    length, so both fast and slow stretches of the pulse are sampled.
    """
    coarse = np.linspace(eps0, eps_f, n_coarse)
    r = rate(coarse)
    s = integrate.cumulative_trapezoid(r, dx=abs(coarse[1] - coarse[0]), initial=0.0)
    frac = np.linspace(0.0, 1.0, n_coarse)
    u = 0.5 * frac + 0.5 * (s / s[-1] if s[-1] > 0 else frac)
    nodes = np.interp(np.linspace(0.0, 1.0, n_nodes), u, coarse)
    nodes[0], nodes[-1] = eps0, eps_f
    return nodes, coarse, r


def _hodograph_times(rate, nodes):
    """RK4 for ``dt/d eps = rate(eps)``: cumulative Simpson sums over the nodes."""
    h = np.abs(np.diff(nodes))
    mid = 0.5 * (nodes[1:] + nodes[:-1])
    r_nodes = rate(nodes)
    r_mid = rate(mid)
    steps = h / 6.0 * (r_nodes[:-1] + 4.0 * r_mid + r_nodes[1:])
    return np.concatenate([[0.0], np.cumsum(steps)])


def _solve_rate(rate, eps0, eps_f, t_f, protocol, n_samples, n_coarse, extra_meta=None, scale=1.0):
    t_f = check_positive(t_f, "t_f")
    if n_samples < 3:
        raise ValueError("n_samples must be at least 3")
    meta = {"n_samples": int(n_samples), "integrator": "rk4-hodograph", **(extra_meta or {})}
    if eps0 == eps_f:
        func = lambda t: np.full(np.shape(t), float(eps0))  # noqa: E731
        return PulseSchedule([0.0, t_f], [eps0, eps0], t_f, eps0, eps_f, 0.0, protocol, meta, func)
    lo, hi = sorted((eps0, eps_f))
    nodes, coarse, r_coarse = _node_grid(rate, eps0, eps_f, n_samples, n_coarse)
    length, qerr = _integrate_length(rate, lo, hi, _local_maxima(coarse, r_coarse))
    if not length > 0:
        raise ValueError("fast-QUAD rate vanishes on the whole interval")
    delta = length / t_f
    cum = _hodograph_times(rate, nodes)
    mismatch = abs(cum[-1] / length - 1.0)
    if mismatch > ENDPOINT_RTOL:
        # one refinement pass: twice the nodes
        nodes, _, _ = _node_grid(rate, eps0, eps_f, 2 * n_samples - 1, 2 * n_coarse)
        cum = _hodograph_times(rate, nodes)
        mismatch = abs(cum[-1] / length - 1.0)
        meta["refined"] = True
        if mismatch > ENDPOINT_RTOL:
            raise EndpointMiss(f"pulse misses its endpoint by {mismatch:.2e} (relative)")
    t = cum / delta
    # absorb the residual quadrature/ODE mismatch in the last 0.1% of samples
    k0 = min(len(t) - 2, int(math.ceil((1 - CLAMP_FRACTION) * (len(t) - 1))))
    t[k0:] = t[k0] + (t[k0:] - t[k0]) * (t_f - t[k0]) / (t[-1] - t[k0])
    t[-1] = t_f
    keep = np.concatenate([[True], np.diff(t) > 0])
    if not keep.all():
        logger.debug("dropping %d coincident samples", int((~keep).sum()))
    meta.update(length=float(scale * length), quad_error=float(qerr),
                endpoint_mismatch=float(mismatch), clamp_start=float(t[k0]))
    return PulseSchedule(t[keep], nodes[keep], t_f, eps0, eps_f, scale * delta, protocol, meta)


def path_length(model, eps0, eps_f, level=0):
    """Length ``int sqrt(g) d eps`` of the straight path between two detunings."""
    if eps0 == eps_f:
        return 0.0
    lo, hi = sorted((eps0, eps_f))
    rate = _fast_quad_rate(model, level, "geometric")
    coarse = np.linspace(lo, hi, 4001)
    val, _ = _integrate_length(rate, lo, hi, _local_maxima(coarse, rate(coarse)))
    return val


def adiabaticity(model, eps0, eps_f, t_f, level=0):
    """Conserved speed ``delta = L / t_f`` of the geodesic pulse."""
    return path_length(model, eps0, eps_f, level) / check_positive(t_f, "t_f")


def solve_fast_quad(model, eps0, eps_f, t_f, level=0, n_samples=DEFAULT_SAMPLES,
                    n_coarse=4001, variant="geometric"):
    """Geometric fast-QUAD pulse ``g(eps) (d eps/dt)^2 = delta^2`` for a one-parameter model.

    ``variant="historical"`` replaces ``sqrt(g)`` by the older weight
    ``sum_n |<l|dH|n>| / (E_n - E_l)^2`` for comparison.
    """
    if model.n_params != 1:
        raise ValueError("solve_fast_quad needs a single-parameter model")
    rate = _fast_quad_rate(model, level, variant)
    protocol = "geometric" if variant == "geometric" else "historical"
    return _solve_rate(rate, eps0, eps_f, t_f, protocol, n_samples, n_coarse,
                       {"level": level, "variant": variant})


def sw_closed_form_pulse(omega, de_z, eps0, eps_f, t_f, n_samples=DEFAULT_SAMPLES, n_coarse=4001):
    """Closed-form pulse for the Schrieffer-Wolff 2x2 model.

    Solves ``[(1 + 3J^2) W^2 + eps^2] / (W^2 + eps^2)^(5/2) * d eps/dt = delta / W``
    with ``J = de_z / omega`` and ``W = 2 * omega``, which makes the pulse
    apply to ``sw2_model`` with its off-diagonal element ``omega``.
    """
    if omega <= 0:
        raise ExpansionInvalid("omega must be positive")
    j = abs(de_z / omega)
    if j > 0.5:
        raise ExpansionInvalid(f"J = {j:.3g} is outside the perturbative regime (J <= 0.5)")
    if j > 0.2:
        warnings.warn(f"J = {j:.3g} > 0.2; second-order expansion may be inaccurate", stacklevel=2)
    w = 2.0 * omega
    j2 = j * j

    def rate(eps):
        eps = np.asarray(eps, dtype=float)
        return ((1 + 3 * j2) * w**2 + eps**2) / (w**2 + eps**2) ** 2.5

    return _solve_rate(rate, eps0, eps_f, t_f, "sw_closed_form", n_samples, n_coarse,
                       {"omega": omega, "de_z": de_z, "J": j}, scale=w)


class _PulseEstimator(BaseEstimator):
    """Common sklearn surface: ``fit(model)`` builds ``schedule_``, ``predict(t)`` samples it."""

    def predict(self, t):
        check_is_fitted(self, "schedule_")
        return self.schedule_(np.asarray(t, dtype=float))

    def _set_fitted(self, schedule):
        self.schedule_ = schedule
        self.delta_ = schedule.delta
        self.t_ = schedule.t
        return self


class LinearPulse(_PulseEstimator):
    def __init__(self, eps0=0.0, eps_f=1.0, t_f=1.0):
        self.eps0 = eps0
        self.eps_f = eps_f
        self.t_f = t_f

    def fit(self, model=None, y=None):
        return self._set_fitted(linear_pulse(self.eps0, self.eps_f, self.t_f))


class GeometricPulse(_PulseEstimator):
    """Fast-QUAD pulse fitted to a single-parameter Hamiltonian.

    Parameters
    ----------
    eps0, eps_f : float
        Boundary values of the swept parameter.
    t_f : float
        Pulse duration.
    level : int
        Followed eigenstate.
    n_samples : int
        Number of schedule samples.
    variant : {"geometric", "historical"}
    """

    def __init__(self, eps0=0.0, eps_f=1.0, t_f=1.0, level=0, n_samples=DEFAULT_SAMPLES,
                 variant="geometric"):
        self.eps0 = eps0
        self.eps_f = eps_f
        self.t_f = t_f
        self.level = level
        self.n_samples = n_samples
        self.variant = variant

    def fit(self, model, y=None):
        sched = solve_fast_quad(model, self.eps0, self.eps_f, self.t_f, self.level,
                                self.n_samples, variant=self.variant)
        self.model_ = model
        return self._set_fitted(sched)

    def score(self, model=None, y=None):
        """Negative worst relative deviation of the conserved charge from ``delta^2``."""
        check_is_fitted(self, "schedule_")
        q = self.schedule_.killing_charge(model or self.model_, self.level)
        return -float(np.max(np.abs(q / self.delta_**2 - 1.0)))


class SWClosedFormPulse(_PulseEstimator):
    def __init__(self, omega=1.0, de_z=0.0, eps0=0.0, eps_f=1.0, t_f=1.0,
                 n_samples=DEFAULT_SAMPLES):
        self.omega = omega
        self.de_z = de_z
        self.eps0 = eps0
        self.eps_f = eps_f
        self.t_f = t_f
        self.n_samples = n_samples

    def fit(self, model=None, y=None):
        return self._set_fitted(sw_closed_form_pulse(self.omega, self.de_z, self.eps0,
                                                     self.eps_f, self.t_f, self.n_samples))


class AnalyticTwoLevelPulse(_PulseEstimator):
    def __init__(self, theta0=0.0, theta_f=math.pi, t_f=1.0):
        self.theta0 = theta0
        self.theta_f = theta_f
        self.t_f = t_f

    def fit(self, model=None, y=None):
        return self._set_fitted(analytic_two_level(self.theta0, self.theta_f, self.t_f))


def make_pulse(protocol, model, eps0, eps_f, t_f, level=0, n_samples=DEFAULT_SAMPLES, **kw):
    """Dispatch on protocol name; ``sw`` needs ``omega`` and ``de_z`` keywords."""
    if protocol == "linear":
        return linear_pulse(eps0, eps_f, t_f)
    if protocol in ("geometric", "historical"):
        return solve_fast_quad(model, eps0, eps_f, t_f, level, n_samples, variant=protocol)
    if protocol in ("sw", "sw_closed_form"):
        return sw_closed_form_pulse(kw["omega"], kw["de_z"], eps0, eps_f, t_f, n_samples)
    raise ValueError(f"unknown protocol {protocol!r}")
