"""Reference computations that share no code with the package."""

import math

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import sqrtm


def random_hermitian(rng, d, scale=1.0):
    a = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    return scale * (a + a.conj().T) / 2


def random_density(rng, d, rank=None):
    rank = rank or d
    a = rng.normal(size=(d, rank)) + 1j * rng.normal(size=(d, rank))
    rho = a @ a.conj().T
    return rho / np.trace(rho).real


def random_state(rng, d):
    v = rng.normal(size=d) + 1j * rng.normal(size=d)
    return v / np.linalg.norm(v)


def taylor_expm(a, terms=20):
    """Plain truncated power series, no scaling."""
    out = np.eye(a.shape[0], dtype=complex)
    term = np.eye(a.shape[0], dtype=complex)
    for k in range(1, terms + 1):
        term = term @ a / k
        out = out + term
    return out


def char_poly_roots(h):
    """Eigenvalues as roots of the characteristic polynomial (Faddeev-LeVerrier)."""
    n = h.shape[0]
    m = np.zeros_like(h)
    coeffs = [1.0 + 0j]
    for k in range(1, n + 1):
        m = h @ m + coeffs[-1] * np.eye(n)
        coeffs.append(-np.trace(h @ m) / k)
    return np.sort(np.roots(coeffs).real)


def cubic_roots(a, b, c, d):
    """Real roots of a x^3 + b x^2 + c x + d with three real roots (trigonometric form)."""
    p = (3 * a * c - b * b) / (3 * a * a)
    q = (2 * b**3 - 9 * a * b * c + 27 * a * a * d) / (27 * a**3)
    r = 2 * math.sqrt(-p / 3)
    phi = math.acos(3 * q / (p * r))
    roots = [r * math.cos((phi - 2 * math.pi * k) / 3) - b / (3 * a) for k in range(3)]
    return np.sort(roots)


def central_difference(f, x, h=1e-4):
    return (f(x + h) - f(x - h)) / (2 * h)


def overlap_metric(hfun, x, dx):
    """``(1 - |<psi(x-dx/2)|psi(x+dx/2)>|^2) / dx^2`` from plain eigh.

    The infidelity is summed over the overlaps with the excited states of
    the left point, so tiny metrics survive rounding.
    """
    others = np.linalg.eigh(hfun(x - dx / 2))[1][:, 1:]
    b = np.linalg.eigh(hfun(x + dx / 2))[1][:, 0]
    return float(np.sum(np.abs(others.conj().T @ b) ** 2)) / dx**2


def spectral_metric_dense(hfun, dhfun, xs):
    """Ground-state metric of a one-parameter family on a grid, summed over states."""
    hs = np.array([hfun(x) for x in xs])
    dhs = np.array([dhfun(x) for x in xs])
    ev, vec = np.linalg.eigh(hs)
    c = np.einsum("nim,nij,nj->nm", vec.conj(), dhs, vec[:, :, 0])
    d = ev - ev[:, :1]
    return np.sum(np.abs(c[:, 1:] / d[:, 1:]) ** 2, axis=1)


def lindblad_rhs_direct(h, jumps, rho):
    out = -1j * (h @ rho - rho @ h)
    for m in jumps:
        out = out + m @ rho @ m.conj().T - 0.5 * (m.conj().T @ m @ rho + rho @ m.conj().T @ m)
    return out


def uhlmann_sqrtm(rho, sigma):
    r = sqrtm(rho)
    return float(np.real(np.trace(sqrtm(r @ sigma @ r))) ** 2)


def schrodinger_ivp(hfun, psi0, t_f, rtol=1e-11, atol=1e-12):
    def rhs(t, y):
        return -1j * (hfun(t) @ y)

    sol = solve_ivp(rhs, (0, t_f), psi0.astype(complex), method="DOP853", rtol=rtol, atol=atol)
    return sol.y[:, -1]


def lindblad_ivp(hfun, jumps, rho0, t_f, rtol=1e-10, atol=1e-12):
    d = rho0.shape[0]

    def rhs(t, y):
        return lindblad_rhs_direct(hfun(t), jumps, y.reshape(d, d)).reshape(-1)

    sol = solve_ivp(rhs, (0, t_f), rho0.astype(complex).reshape(-1), method="DOP853", rtol=rtol,
                    atol=atol)
    return sol.y[:, -1].reshape(d, d)


def fast_quad_ivp(gfun, eps0, eps_f, t_f, length):
    """Integrate d eps/dt = sign * delta / sqrt(g) directly in time."""
    delta = length / t_f
    sign = math.copysign(1.0, eps_f - eps0)

    def rhs(t, y):
        return [sign * delta / math.sqrt(gfun(y[0]))]

    return solve_ivp(rhs, (0, t_f), [eps0], method="DOP853", rtol=1e-11, atol=1e-11,
                     dense_output=True)
