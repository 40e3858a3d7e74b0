"""Dense complex linear algebra for small matrices.

Everything here works on matrices of dimension up to a few dozen. Where it is
cheap to do so, functions also accept stacks of matrices with shape
``(..., d, d)`` so that whole time grids can be processed in one call.
"""

from dataclasses import dataclass
import math

import numpy as np

from .exceptions import ConvergenceFailure, ShapeMismatch
from .validation import check_hermitian, check_square


@dataclass(frozen=True)
class EigenSystem:
    """Ascending eigenvalues and gauge-fixed orthonormal eigenvector columns."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @property
    def dim(self):
        return self.eigenvalues.shape[-1]

    def vector(self, n):
        return self.eigenvectors[..., :, n]

    def gap(self, n):
        """Smallest distance from level ``n`` to any other level."""
        e = self.eigenvalues
        others = np.delete(e, n, axis=-1)
        return np.min(np.abs(others - e[..., n : n + 1]), axis=-1)


def fix_gauge(vectors):
    """Rotate each eigenvector column so its largest component is real positive.

    Ties in magnitude are broken towards the lowest index, after rounding to
    12 digits, so identical inputs always give identical phases.
    """
    mag = np.round(np.abs(vectors), 12)
    idx = np.argmax(mag, axis=-2)
    pivot = np.take_along_axis(vectors, idx[..., None, :], axis=-2)
    phase = pivot / np.abs(pivot)
    return vectors / phase


def eigensystem(h, method="lapack"):
    """Hermitian eigendecomposition with a deterministic gauge.

    Parameters
    ----------
    h : array_like, shape (d, d) or (..., d, d)
        Hermitian matrix or stack of Hermitian matrices.
    method : {"lapack", "jacobi"}
        ``"lapack"`` calls ``numpy.linalg.eigh``; ``"jacobi"`` uses the cyclic
        complex Jacobi routine below (single matrices only).
    """
    h = check_hermitian(h)
    if method == "jacobi":
        if h.ndim != 2:
            raise ShapeMismatch("jacobi method takes a single matrix")
        evals, evecs = jacobi_eigh(h)
    elif method == "lapack":
        try:
            evals, evecs = np.linalg.eigh(h)
        except np.linalg.LinAlgError as exc:
            raise ConvergenceFailure(str(exc)) from exc
    else:
        raise ValueError(f"unknown eigensolver {method!r}")
    return EigenSystem(evals, fix_gauge(evecs))


def jacobi_eigh(h, tol=1e-15, max_sweeps=100):
    """Cyclic Jacobi diagonalization of a complex Hermitian matrix.

    Each rotation first removes the phase of the pivot ``h[p, q]`` and then
    applies the real symmetric Jacobi rotation. Returns eigenvalues sorted
    ascending and the matching (un-gauged) eigenvector columns.
    """
    a = check_square(h).copy()
    n = a.shape[0]
    v = np.eye(n, dtype=complex)
    scale = max(np.linalg.norm(a), np.finfo(float).tiny)
    offdiag = ~np.eye(n, dtype=bool)
    for _ in range(max_sweeps):
        off = np.linalg.norm(a[offdiag])
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                beta = a[p, q]
                mod = abs(beta)
                if mod <= tol * scale * 1e-3:
                    continue
                phase = beta / mod
                theta = 0.5 * math.atan2(2.0 * mod, (a[q, q] - a[p, p]).real)
                c, s = math.cos(theta), math.sin(theta)
                w = np.array([[c, s], [-s / phase, c / phase]])
                cols = [p, q]
                a[:, cols] = a[:, cols] @ w
                a[cols, :] = w.conj().T @ a[cols, :]
                a[p, q] = a[q, p] = 0.0
                v[:, cols] = v[:, cols] @ w
    else:
        raise ConvergenceFailure(f"Jacobi did not converge in {max_sweeps} sweeps")
    evals = np.real(np.diag(a))
    order = np.argsort(evals, kind="stable")
    return evals[order], v[:, order]


def expm_unitary(h, dt):
    """``exp(-i h dt)`` via eigendecomposition; ``h`` may be a stack."""
    h = check_hermitian(h)
    evals, evecs = np.linalg.eigh(h)
    dt = np.asarray(dt, dtype=float)
    phases = np.exp(-1j * evals * dt[..., None])
    return (evecs * phases[..., None, :]) @ np.swapaxes(evecs.conj(), -1, -2)


def expm_taylor(a, order=14):
    """Matrix exponential by scaling and squaring with a truncated Taylor core.

    Works for general (non-normal) square matrices and stacks of them. The
    matrix is scaled by ``2**-s`` until its 1-norm is at most 1/2, where a
    14-term Horner evaluation is accurate to below double precision.
    """
    a = np.asarray(a, dtype=complex)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise ShapeMismatch(f"expm_taylor needs square matrices, got {a.shape}")
    norm = np.max(np.sum(np.abs(a), axis=-2), initial=0.0)
    s = max(0, int(math.ceil(math.log2(norm / 0.5)))) if norm > 0.5 else 0
    x = a / 2.0**s
    eye = np.broadcast_to(np.eye(a.shape[-1], dtype=complex), a.shape)
    result = eye + x / order
    for k in range(order - 1, 0, -1):
        result = eye + (x @ result) / k
    for _ in range(s):
        result = result @ result
    return result


def kron(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeMismatch("kron takes two 2-d matrices")
    return np.kron(a, b)


def vec_row(rho):
    """Stack the rows of ``rho`` into one vector: [[a, b], [c, d]] -> (a, b, c, d)."""
    rho = np.asarray(rho)
    if rho.ndim != 2:
        raise ShapeMismatch(f"vec_row takes a 2-d matrix, got shape {rho.shape}")
    return rho.reshape(-1).copy()


def unvec_row(v):
    v = np.asarray(v)
    if v.ndim != 1:
        raise ShapeMismatch("unvec_row takes a 1-d vector")
    d = math.isqrt(v.shape[0])
    if d * d != v.shape[0]:
        raise ShapeMismatch(f"length {v.shape[0]} is not a perfect square")
    return v.reshape(d, d).copy()
