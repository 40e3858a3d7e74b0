"""Input validation helpers, in the spirit of ``sklearn.utils.validation``."""

import numpy as np

from .exceptions import NotHermitian, ShapeMismatch

HERMITIAN_RTOL = 1e-10


def as_complex_matrix(a, name="matrix"):
    """Return ``a`` as a finite 2-d complex array."""
    arr = np.asarray(a, dtype=complex)
    if arr.ndim != 2:
        raise ShapeMismatch(f"{name} must be 2-d, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def check_square(a, name="matrix"):
    arr = as_complex_matrix(a, name)
    if arr.shape[0] != arr.shape[1]:
        raise ShapeMismatch(f"{name} must be square, got shape {arr.shape}")
    return arr


def check_hermitian(a, rtol=HERMITIAN_RTOL, name="matrix"):
    """Validate that ``a`` is Hermitian to relative tolerance ``rtol``.

    Works on a single matrix or on a stack of shape ``(..., d, d)``.
    """
    arr = np.asarray(a, dtype=complex)
    if arr.ndim < 2 or arr.shape[-1] != arr.shape[-2]:
        raise ShapeMismatch(f"{name} must be square, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    scale = max(np.max(np.abs(arr), initial=0.0), 1.0)
    asym = np.max(np.abs(arr - np.swapaxes(arr.conj(), -1, -2)), initial=0.0)
    if asym > rtol * scale:
        raise NotHermitian(f"{name} is not Hermitian (asymmetry {asym:.3e})")
    return arr


def check_state_vector(psi, dim=None, atol=1e-9):
    psi = np.asarray(psi, dtype=complex)
    if psi.ndim != 1:
        raise ShapeMismatch(f"state vector must be 1-d, got shape {psi.shape}")
    if dim is not None and psi.shape[0] != dim:
        raise ShapeMismatch(f"state has dimension {psi.shape[0]}, expected {dim}")
    norm = np.linalg.norm(psi)
    if abs(norm - 1.0) > atol:
        raise ValueError(f"state vector is not normalized (norm {norm!r})")
    return psi


def check_density_matrix(rho, dim=None, atol=1e-9, min_eig=-1e-8):
    """Validate Hermiticity, unit trace and positivity of ``rho``."""
    rho = check_square(rho, "density matrix")
    if dim is not None and rho.shape[0] != dim:
        raise ShapeMismatch(f"density matrix has dimension {rho.shape[0]}, expected {dim}")
    if np.max(np.abs(rho - rho.conj().T)) > atol:
        raise NotHermitian("density matrix is not Hermitian")
    tr = np.trace(rho)
    if abs(tr - 1.0) > atol:
        raise ValueError(f"density matrix trace is {tr!r}, expected 1")
    lo = np.linalg.eigvalsh(rho)[0]
    if lo < min_eig:
        raise ValueError(f"density matrix has negative eigenvalue {lo!r}")
    return rho


def check_positive(value, name):
    value = float(value)
    if not np.isfinite(value) or value <= 0:
        raise ValueError(f"{name} must be positive and finite, got {value!r}")
    return value
