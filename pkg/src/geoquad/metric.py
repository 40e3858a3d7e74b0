"""Quantum geometric tensor of a parametric Hamiltonian eigenstate.

Two independent routes are provided. ``qgt_spectral`` uses the sum over
states with squared energy denominators and needs no eigenvector
derivatives. ``qgt_tangent`` differentiates the eigenstate projector
numerically and contracts the tangent vectors. ``qgt_fd_oracle`` measures
the infinitesimal infidelity along a direction and is used as a check.
"""

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import DegenerateSpectrum, ShapeMismatch
from .linalg import eigensystem

DEGENERACY_RTOL = 1e-10


@dataclass(frozen=True)
class GeoTensor:
    """Metric ``g`` and Berry part ``berry`` of ``q = g + i berry`` at ``x``."""

    g: np.ndarray
    berry: np.ndarray
    level: int = 0
    x: np.ndarray = field(default=None)

    @property
    def q(self):
        return self.g + 1j * self.berry

    def __post_init__(self):
        g, b = np.asarray(self.g, float), np.asarray(self.berry, float)
        if g.ndim != 2 or g.shape[0] != g.shape[1] or b.shape != g.shape:
            raise ShapeMismatch("g and berry must be square matrices of equal shape")


def _check_gap(evals, level, rtol=DEGENERACY_RTOL):
    evals = np.asarray(evals)
    scale = np.max(np.abs(evals), axis=-1)
    others = np.delete(evals, level, axis=-1)
    gap = np.min(np.abs(others - evals[..., level : level + 1]), axis=-1)
    bad = gap <= rtol * scale
    if np.any(bad):
        raise DegenerateSpectrum(
            f"level {level} is degenerate (gap {np.min(gap):.3e}, scale {np.max(scale):.3e})"
        )
    return gap


def _symmetrize(q):
    g = 0.5 * (q.real + q.real.T)
    berry = 0.5 * (q.imag - q.imag.T)
    return g, berry


def qgt_spectral(model, x, level=0):
    """Geometric tensor from the sum over states.

    ``q_{mu nu} = sum_{n != level} <l|dH_mu|n><n|dH_nu|l> / (E_n - E_l)^2``
    """
    x = model.as_point(x)
    es = eigensystem(model.h_at(x))
    _check_gap(es.eigenvalues, level)
    vecs = es.eigenvectors
    denom = es.eigenvalues - es.eigenvalues[level]
    mask = np.arange(model.dim) != level
    # row mu: <n|dH_mu|level> for all n
    couplings = np.stack([vecs.conj().T @ model.dh_at(x, mu) @ vecs[:, level]
                          for mu in range(model.n_params)])
    weighted = couplings[:, mask] / denom[mask]
    q = weighted.conj() @ weighted.T
    g, berry = _symmetrize(q)
    return GeoTensor(g, berry, level, x)


def _projector(model, x, level):
    es = eigensystem(model.h_at(x))
    _check_gap(es.eigenvalues, level)
    v = es.eigenvectors[:, level]
    return np.outer(v, v.conj()), es


def default_steps(model, x, level=0, factor=1e-4):
    """Finite-difference steps scaled to the local energy gap per parameter."""
    x = model.as_point(x)
    es = eigensystem(model.h_at(x))
    gap = _check_gap(es.eigenvalues, level)
    steps = []
    for mu in range(model.n_params):
        dh = np.linalg.norm(model.dh_at(x, mu), 2)
        steps.append(factor * gap / dh if dh > 0 else factor * max(1.0, abs(x[mu])))
    return np.array(steps)


def qgt_tangent(model, x, level=0, steps=None):
    """Geometric tensor from tangent vectors ``t_mu = d rho / d x^mu``.

    The projector derivative is a central difference; ``g = tr(t_mu t_nu)/2``
    and the Berry part is ``Im tr(rho t_mu t_nu)``.
    """
    x = model.as_point(x)
    rho, _ = _projector(model, x, level)
    if steps is None:
        steps = default_steps(model, x, level)
    steps = np.broadcast_to(np.asarray(steps, float), (model.n_params,))
    tangents = []
    for mu in range(model.n_params):
        e = np.zeros(model.n_params)
        e[mu] = steps[mu]
        plus, _ = _projector(model, x + e, level)
        minus, _ = _projector(model, x - e, level)
        tangents.append((plus - minus) / (2 * steps[mu]))
    n = model.n_params
    g = np.empty((n, n))
    berry = np.empty((n, n))
    for mu in range(n):
        for nu in range(n):
            g[mu, nu] = 0.5 * np.trace(tangents[mu] @ tangents[nu]).real
            berry[mu, nu] = np.trace(rho @ tangents[mu] @ tangents[nu]).imag
    g, _ = _symmetrize(g.astype(complex))
    berry = 0.5 * (berry - berry.T)
    return GeoTensor(g, berry, level, x)


def qgt_fd_oracle(model, x, dx, level=0):
    """Metric along ``dx`` from the overlap of neighbouring eigenstates.

    Returns ``(1 - |<psi(x - dx/2)|psi(x + dx/2)>|^2) / |dx|^2``, which
    tends to ``g_{mu nu} u^mu u^nu`` for the unit direction ``u``.
    The infidelity is evaluated as the squared norm of the orthogonal
    component, which avoids cancellation for small ``dx``.
    """
    x = model.as_point(x)
    dx = np.broadcast_to(np.asarray(dx, float), (model.n_params,))
    norm2 = float(dx @ dx)
    if norm2 == 0:
        raise ValueError("dx must be nonzero")
    a = eigensystem(model.h_at(x - dx / 2))
    b = eigensystem(model.h_at(x + dx / 2))
    _check_gap(a.eigenvalues, level)
    _check_gap(b.eigenvalues, level)
    va, vb = a.eigenvectors[:, level], b.eigenvectors[:, level]
    perp = vb - va * np.vdot(va, vb)
    return float(np.vdot(perp, perp).real) / norm2


def pullback(gt, jacobian):
    """Transform the tensor to new coordinates: ``g' = J^T g J``."""
    jac = np.asarray(jacobian, dtype=float)
    n = gt.g.shape[0]
    if jac.ndim != 2 or jac.shape[0] != n or jac.shape[0] != jac.shape[1]:
        raise ShapeMismatch(f"jacobian must be {n}x{n}, got {jac.shape}")
    if not np.all(np.isfinite(jac)):
        raise ValueError("jacobian has non-finite entries")
    return GeoTensor(jac.T @ gt.g @ jac, jac.T @ gt.berry @ jac, gt.level, gt.x)


def check_singular(gt, rtol=1e-12):
    """Return ``(singular, det g)`` with singularity judged against ``max|g|^n``."""
    g = np.asarray(gt.g)
    det = float(np.linalg.det(g)) if g.size else 1.0
    scale = np.max(np.abs(g), initial=0.0) ** g.shape[0]
    return bool(scale == 0 or abs(det) < rtol * scale), det


def metric_curve(model, xs, level=0):
    """Vectorized ``g`` for a single-parameter model over an array of points."""
    if model.n_params != 1:
        raise ShapeMismatch("metric_curve is for single-parameter models")
    xs = np.asarray(xs, dtype=float).reshape(-1)
    hs = model.h_batch(xs)
    evals, evecs = np.linalg.eigh(hs)
    _check_gap(evals, level)
    dh = model.dh_batch(xs, 0)
    v0 = evecs[:, :, level]
    couplings = np.einsum("nim,nij,nj->nm", evecs.conj(), dh, v0)
    denom = evals - evals[:, level : level + 1]
    denom[:, level] = np.inf
    return np.sum(np.abs(couplings / denom) ** 2, axis=1)


class QuantumMetric(TransformerMixin, BaseEstimator):
    """Transformer mapping parameter points to geometric-tensor features.

    ``transform`` returns, per row of ``X``, the upper triangle of ``g``, the
    strict upper triangle of the Berry part and ``det g``, in the order given
    by ``get_feature_names_out``.

    Parameters
    ----------
    model : ParametricHamiltonian
    level : int
        Index of the followed eigenstate (0 is the ground state).
    method : {"spectral", "tangent"}
    """

    def __init__(self, model=None, level=0, method="spectral"):
        self.model = model
        self.level = level
        self.method = method

    def fit(self, X=None, y=None):
        if self.model is None:
            raise ValueError("QuantumMetric needs a model")
        if self.method not in ("spectral", "tangent"):
            raise ValueError(f"unknown method {self.method!r}")
        if X is not None:
            self.model.as_points(X)
        self.n_features_in_ = self.model.n_params
        self.feature_names_in_ = np.array(self.model.param_names, dtype=object)
        return self

    def tensors(self, X):
        check_is_fitted(self, "n_features_in_")
        fn = qgt_spectral if self.method == "spectral" else qgt_tangent
        return [fn(self.model, x, self.level) for x in self.model.as_points(X)]

    def transform(self, X):
        rows = []
        n = self.model.n_params
        iu = np.triu_indices(n)
        iu1 = np.triu_indices(n, 1)
        for gt in self.tensors(X):
            rows.append(np.concatenate([gt.g[iu], gt.berry[iu1], [check_singular(gt)[1]]]))
        return np.array(rows).reshape(-1, len(self.get_feature_names_out()))

    def get_feature_names_out(self, input_features=None):
        names = self.model.param_names
        n = len(names)
        out = [f"g_{names[i]}_{names[j]}" for i, j in zip(*np.triu_indices(n))]
        out += [f"berry_{names[i]}_{names[j]}" for i, j in zip(*np.triu_indices(n, 1))]
        out.append("det_g")
        return np.array(out, dtype=object)
