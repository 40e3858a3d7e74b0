"""Parametric Hamiltonians with analytic parameter derivatives.

A model maps a point ``x`` in its active parameter space to a Hermitian
matrix ``H(x)`` and provides ``dH/dx^mu``. Single-parameter models accept a
plain scalar for ``x``. Stacks of points are evaluated with ``h_batch`` /
``dh_batch``; affine models do this without a Python loop.
"""

from dataclasses import dataclass, asdict
import math

import numpy as np

from .exceptions import DegenerateSpectrum, ExpansionInvalid, ShapeMismatch
from .linalg import fix_gauge

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)

# relative gap below which the two-level truncation is ill defined
TRUNCATION_GAP_RTOL = 1e-12


class ParametricHamiltonian:
    """Base class for models ``x -> H(x)``.

    Subclasses set ``dim``, ``param_names`` and ``fixed_params`` and implement
    ``_h(x)`` and ``_dh(x, mu)`` for a 1-d point ``x``.
    """

    dim = None
    param_names = ()
    fixed_params = {}

    @property
    def n_params(self):
        return len(self.param_names)

    def param_index(self, mu):
        if isinstance(mu, str):
            try:
                return self.param_names.index(mu)
            except ValueError:
                raise KeyError(f"{mu!r} is not an active parameter of {self!r}") from None
        mu = int(mu)
        if not 0 <= mu < self.n_params:
            raise IndexError(f"parameter index {mu} out of range")
        return mu

    def as_point(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if x.shape != (self.n_params,):
            raise ShapeMismatch(f"expected {self.n_params} parameter values, got {x.shape}")
        return x

    def as_points(self, xs):
        xs = np.asarray(xs, dtype=float)
        if self.n_params == 1 and xs.ndim <= 1:
            xs = xs.reshape(-1, 1)
        if xs.ndim != 2 or xs.shape[1] != self.n_params:
            raise ShapeMismatch(f"expected points of shape (n, {self.n_params}), got {xs.shape}")
        return xs

    def h_at(self, x):
        return self._h(self.as_point(x))

    def dh_at(self, x, mu):
        return self._dh(self.as_point(x), self.param_index(mu))

    def h_batch(self, xs):
        xs = self.as_points(xs)
        return np.stack([self._h(x) for x in xs]) if len(xs) else np.zeros((0, self.dim, self.dim), complex)

    def dh_batch(self, xs, mu):
        xs = self.as_points(xs)
        mu = self.param_index(mu)
        return np.stack([self._dh(x, mu) for x in xs]) if len(xs) else np.zeros((0, self.dim, self.dim), complex)

    def __repr__(self):
        fixed = ", ".join(f"{k}={v:g}" for k, v in self.fixed_params.items())
        return f"{type(self).__name__}(active={list(self.param_names)}, {fixed})"


class AffineHamiltonian(ParametricHamiltonian):
    """``H(x) = H0 + sum_mu x^mu H_mu`` with constant coefficient matrices."""

    def __init__(self, h0, coefficients, param_names, fixed_params=None, name=None):
        self.h0 = np.array(h0, dtype=complex)
        self.coefficients = [np.array(c, dtype=complex) for c in coefficients]
        self.param_names = tuple(param_names)
        self.fixed_params = dict(fixed_params or {})
        self.dim = self.h0.shape[0]
        self.name = name or type(self).__name__
        if len(self.coefficients) != len(self.param_names):
            raise ShapeMismatch("one coefficient matrix per parameter is required")
        for m in [self.h0, *self.coefficients]:
            if m.shape != (self.dim, self.dim):
                raise ShapeMismatch("coefficient matrices must share the shape of H0")

    def _h(self, x):
        out = self.h0.copy()
        for xi, c in zip(x, self.coefficients):
            out += xi * c
        return out

    def _dh(self, x, mu):
        return self.coefficients[mu].copy()

    def h_batch(self, xs):
        xs = self.as_points(xs)
        coeff = np.stack(self.coefficients)
        return self.h0 + np.einsum("nk,kij->nij", xs.astype(complex), coeff)

    def dh_batch(self, xs, mu):
        xs = self.as_points(xs)
        return np.broadcast_to(self.coefficients[self.param_index(mu)], (len(xs), self.dim, self.dim)).copy()

    def scaled(self, factor):
        return AffineHamiltonian(
            factor * self.h0,
            [factor * c for c in self.coefficients],
            self.param_names,
            self.fixed_params,
            name=self.name,
        )

    def __repr__(self):
        fixed = ", ".join(f"{k}={v:g}" for k, v in self.fixed_params.items())
        return f"{self.name}(active={list(self.param_names)}, {fixed})"


class PauliHamiltonian(ParametricHamiltonian):
    """Two-level ``[[z, rho e^{-i phi}], [rho e^{i phi}, -z]]``.

    With ``coords="bloch"`` the parameters are ``(theta, phi, r)`` and
    ``rho = r sin(theta)``, ``z = r cos(theta)``.
    """

    dim = 2
    _COORDS = {"cylindrical": ("rho", "phi", "z"), "bloch": ("theta", "phi", "r")}

    def __init__(self, coords="cylindrical", active=None, **values):
        if coords not in self._COORDS:
            raise ValueError(f"unknown coordinates {coords!r}")
        names = self._COORDS[coords]
        defaults = {"rho": 0.0, "phi": 0.0, "z": 1.0, "theta": 0.0, "r": 1.0}
        unknown = set(values) - set(names)
        if unknown:
            raise ValueError(f"unknown Pauli parameters {sorted(unknown)}")
        active = tuple(active) if active is not None else names
        if not active or set(active) - set(names):
            raise ValueError(f"active parameters must be a subset of {names}")
        self.coords = coords
        self.param_names = active
        self.fixed_params = {n: float(values.get(n, defaults[n])) for n in names if n not in active}

    def _full(self, x):
        vals = dict(self.fixed_params)
        vals.update(zip(self.param_names, x))
        return vals

    def _h(self, x):
        v = self._full(x)
        if self.coords == "bloch":
            rho, z = v["r"] * math.sin(v["theta"]), v["r"] * math.cos(v["theta"])
        else:
            rho, z = v["rho"], v["z"]
        e = np.exp(1j * v["phi"])
        return np.array([[z, rho * e.conjugate()], [rho * e, -z]], dtype=complex)

    def _dh(self, x, mu):
        v = self._full(x)
        name = self.param_names[mu]
        e = np.exp(1j * v["phi"])
        if self.coords == "bloch":
            r, th = v["r"], v["theta"]
            if name == "theta":
                return r * np.array([[-math.sin(th), math.cos(th) * e.conjugate()],
                                     [math.cos(th) * e, math.sin(th)]], dtype=complex)
            if name == "r":
                return np.array([[math.cos(th), math.sin(th) * e.conjugate()],
                                 [math.sin(th) * e, -math.cos(th)]], dtype=complex)
            rho = r * math.sin(th)
        else:
            if name == "rho":
                return np.array([[0, e.conjugate()], [e, 0]], dtype=complex)
            if name == "z":
                return SIGMA_Z.copy()
            rho = v["rho"]
        # d/dphi
        return np.array([[0, -1j * rho * e.conjugate()], [1j * rho * e, 0]], dtype=complex)


class ScaledHamiltonian(ParametricHamiltonian):
    """``factor * H(x)``; used to switch between ordinary and angular units."""

    def __init__(self, model, factor):
        self.model = model
        self.factor = float(factor)
        self.dim = model.dim
        self.param_names = model.param_names
        self.fixed_params = dict(model.fixed_params)

    def _h(self, x):
        return self.factor * self.model._h(x)

    def _dh(self, x, mu):
        return self.factor * self.model._dh(x, mu)

    def h_batch(self, xs):
        return self.factor * self.model.h_batch(xs)

    def dh_batch(self, xs, mu):
        return self.factor * self.model.dh_batch(xs, mu)


class TruncatedHamiltonian(ParametricHamiltonian):
    """Projection of a model onto its two lowest eigenvectors.

    In instantaneous mode the basis is recomputed at every evaluation point,
    so ``h_at(x)`` is ``diag(E0(x), E1(x))`` and ``dh_at(x)`` is ``dH(x)``
    projected onto the eigenbasis at ``x``. With a frozen point ``x0`` the
    basis is the eigenbasis at ``x0`` for every evaluation, which makes the
    result an ordinary parametric family with exact derivatives.
    """

    dim = 2

    def __init__(self, model, x0=None):
        if model.dim < 3:
            raise ShapeMismatch("truncation needs a model with at least three levels")
        self.model = model
        self.param_names = model.param_names
        self.fixed_params = dict(model.fixed_params)
        self.x0 = None if x0 is None else model.as_point(x0)
        self._frozen = None if x0 is None else self._basis(model.h_at(self.x0)[None])[0]

    @staticmethod
    def _basis(hs):
        evals, evecs = np.linalg.eigh(hs)
        scale = np.maximum(np.max(np.abs(hs), axis=(-2, -1)), 1e-300)
        gap = evals[:, 2] - evals[:, 1]
        if np.any(gap < TRUNCATION_GAP_RTOL * scale):
            raise DegenerateSpectrum("second and third levels are degenerate; truncation undefined")
        return fix_gauge(evecs[:, :, :2])

    def _project(self, ops, basis):
        return np.swapaxes(basis.conj(), -1, -2) @ ops @ basis

    def _bases(self, hs):
        if self._frozen is not None:
            return np.broadcast_to(self._frozen, (len(hs),) + self._frozen.shape)
        return self._basis(hs)

    def _h(self, x):
        return self.h_batch(x[None])[0]

    def _dh(self, x, mu):
        return self.dh_batch(x[None], mu)[0]

    def h_batch(self, xs):
        hs = self.model.h_batch(xs)
        return self._project(hs, self._bases(hs))

    def dh_batch(self, xs, mu):
        hs = self.model.h_batch(xs)
        return self._project(self.model.dh_batch(xs, mu), self._bases(hs))

    def __repr__(self):
        mode = "instantaneous" if self.x0 is None else f"frozen at {self.x0.tolist()}"
        return f"TruncatedHamiltonian({self.model!r}, {mode})"


@dataclass(frozen=True)
class DQDParams:
    """Energies of the double-dot models (GHz, or rad/ns after scaling)."""

    u_tilde: float
    omega: float
    de_z: float
    e_z: float = 0.0
    de_x: float = 0.0

    def __post_init__(self):
        for key, value in asdict(self).items():
            if not math.isfinite(value):
                raise ValueError(f"{key} must be finite")
        if self.u_tilde <= 0:
            raise ValueError("u_tilde must be positive")


def pauli_model(mode="cylindrical", **values):
    """Pauli two-level model.

    ``mode`` is ``"cylindrical"`` (rho, phi, z), ``"bloch"`` (theta, phi on the
    unit sphere) or ``"rho_only"`` (rho active; phi and z fixed).
    """
    if mode == "cylindrical":
        return PauliHamiltonian("cylindrical", **values)
    if mode == "bloch":
        return PauliHamiltonian("bloch", active=("theta", "phi"), **values)
    if mode == "rho_only":
        phi = values.pop("phi", 0.0)
        z = values.pop("z", 0.1)
        if values:
            raise ValueError(f"unexpected parameters {sorted(values)}")
        h0 = z * SIGMA_Z
        h1 = math.cos(phi) * SIGMA_X + math.sin(phi) * SIGMA_Y
        return AffineHamiltonian(h0, [h1], ("rho",), {"phi": phi, "z": z}, name="pauli_rho")
    raise ValueError(f"unknown Pauli mode {mode!r}")


def dqd3_model(params):
    """Three-level model in the basis (S(2,0), S(1,1), T0(1,1)); active: epsilon."""
    p = params
    h0 = np.array([[p.u_tilde, p.omega, 0.0],
                   [p.omega, 0.0, p.de_z],
                   [0.0, p.de_z, 0.0]])
    h1 = np.diag([-1.0, 0.0, 0.0])
    fixed = {"u_tilde": p.u_tilde, "omega": p.omega, "de_z": p.de_z}
    return AffineHamiltonian(h0, [h1], ("epsilon",), fixed, name="dqd3")


def dqd6_model(params):
    """Six-level double-dot model in the basis (S(0,2), S(2,0), up-up, up-down, down-up, down-down)."""
    p = params
    u, om, ez, dz, dx = p.u_tilde, p.omega, p.e_z, p.de_z, p.de_x
    h0 = np.array([
        [u, 0, 0, -om, om, 0],
        [0, u, 0, -om, om, 0],
        [0, 0, ez, dx, -dx, 0],
        [-om, -om, dx, dz, 0, dx],
        [om, om, -dx, 0, -dz, -dx],
        [0, 0, 0, dx, -dx, -ez],
    ], dtype=float)
    h1 = np.diag([1.0, -1.0, 0, 0, 0, 0])
    fixed = {"u_tilde": u, "omega": om, "e_z": ez, "de_z": dz, "de_x": dx}
    return AffineHamiltonian(h0, [h1], ("epsilon",), fixed, name="dqd6")


def sw2_model(omega, de_z):
    """Effective 2x2 singlet model after the Schrieffer-Wolff elimination of T0."""
    if omega == 0 or abs(de_z / omega) >= 1:
        raise ExpansionInvalid(f"|dE_Z/Omega| must be < 1 (omega={omega}, de_z={de_z})")
    j2 = (de_z / omega) ** 2
    off = omega * (1 - j2 / 2)
    h0 = np.array([[0.0, off], [off, 0.0]])
    h1 = np.diag([-(1 - j2), 0.0])
    return AffineHamiltonian(h0, [h1], ("epsilon",), {"omega": omega, "de_z": de_z}, name="sw2")


def truncate_two_level(model, x=None, frozen=False):
    """Restrict ``model`` to the span of its two lowest eigenvectors.

    The basis follows the evaluation point unless ``frozen`` is set, in which
    case it is taken at ``x``. A model that already has two levels is
    returned as is.
    """
    if model.dim == 2:
        return model
    if x is not None:
        TruncatedHamiltonian._basis(model.h_at(x)[None])
    if frozen:
        if x is None:
            raise ValueError("a frozen truncation needs the projection point x")
        return TruncatedHamiltonian(model, x0=x)
    return TruncatedHamiltonian(model)


def scale_model(model, factor):
    """Multiply every energy of ``model`` by ``factor`` (1 or 2*pi)."""
    if factor == 1:
        return model
    if isinstance(model, AffineHamiltonian):
        return model.scaled(factor)
    return ScaledHamiltonian(model, factor)


MODEL_NAMES = ("pauli", "dqd3", "dqd6", "dqd6_truncated", "sw2")


def build_model(name, params, angular_factor=1.0):
    """Construct a named model from a flat parameter mapping.

    Recognised keys: ``u_tilde, omega, e_z, de_z, de_x`` for the double-dot
    models and ``z, phi`` for the Pauli model (active parameter ``rho``).
    """
    params = dict(params)
    if name == "pauli":
        model = pauli_model("rho_only", z=params.get("z", 0.1), phi=params.get("phi", 0.0))
    elif name == "sw2":
        model = sw2_model(params["omega"], params["de_z"])
    elif name in ("dqd3", "dqd6", "dqd6_truncated"):
        dqd = DQDParams(
            u_tilde=params["u_tilde"],
            omega=params["omega"],
            de_z=params["de_z"],
            e_z=params.get("e_z", 0.0),
            de_x=params.get("de_x", 0.0),
        )
        if name == "dqd3":
            model = dqd3_model(dqd)
        else:
            model = dqd6_model(dqd)
            if name == "dqd6_truncated":
                model = truncate_two_level(model)
    else:
        raise KeyError(f"unknown model {name!r}; choose from {MODEL_NAMES}")
    return scale_model(model, angular_factor)
