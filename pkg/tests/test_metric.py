import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from geoquad.exceptions import DegenerateSpectrum, ShapeMismatch
from geoquad.metric import (
    GeoTensor,
    QuantumMetric,
    check_singular,
    metric_curve,
    pullback,
    qgt_fd_oracle,
    qgt_spectral,
    qgt_tangent,
)
from geoquad.models import (
    AffineHamiltonian,
    DQDParams,
    PauliHamiltonian,
    dqd3_model,
    dqd6_model,
    pauli_model,
    sw2_model,
)

from oracles import overlap_metric, random_hermitian, spectral_metric_dense

FIG5 = DQDParams(u_tilde=100, omega=1, de_z=1)
FIG3 = DQDParams(u_tilde=100, omega=10, de_z=1, e_z=10, de_x=0.1)


@pytest.mark.parametrize("theta", [0.3, 1.0, math.pi / 2, 2.5])
def test_bloch_sphere(theta):
    m = pauli_model("bloch")
    gt = qgt_spectral(m, [theta, 0.7])
    np.testing.assert_allclose(gt.g, np.diag([0.25, math.sin(theta) ** 2 / 4]), atol=1e-14)
    assert abs(gt.berry[0, 1]) == pytest.approx(math.sin(theta) / 4, abs=1e-14)
    np.testing.assert_allclose(gt.berry, -gt.berry.T)


def test_pure_sigma_z_family_is_flat():
    m = PauliHamiltonian("cylindrical", active=("z",), rho=0.0)
    gt = qgt_spectral(m, [0.8])
    assert gt.g[0, 0] == 0.0


def test_cylindrical_determinant():
    m = PauliHamiltonian("cylindrical", active=("rho", "phi"), z=1.0)
    for rho in (0.2, 1.0, 3.0):
        singular, det = check_singular(qgt_spectral(m, [rho, 0.4]))
        assert not singular
        assert det == pytest.approx(rho**2 / (16 * (1 + rho**2) ** 3), rel=1e-10)


def test_radial_direction_is_singular():
    # scaling (rho, z) together leaves the eigenstate unchanged
    singular, det = check_singular(qgt_spectral(pauli_model("cylindrical"), [0.5, 0.2, 1.0]))
    assert singular and abs(det) < 1e-15


def test_check_singular_zero():
    assert check_singular(GeoTensor(np.zeros((2, 2)), np.zeros((2, 2))))[0]


def test_fd_oracle_on_bloch_sphere():
    m = pauli_model("bloch")
    val = qgt_fd_oracle(m, [0.25, 0.0], [1e-4, 0.0])
    assert val == pytest.approx(0.25, rel=1e-7)
    val = qgt_fd_oracle(m, [0.25, 0.0], [0.0, 1e-4])
    assert val == pytest.approx(math.sin(0.25) ** 2 / 4, rel=1e-7)
    with pytest.raises(ValueError):
        qgt_fd_oracle(m, [0.25, 0.0], [0.0, 0.0])


def test_rho_only_closed_form():
    z = 0.1
    m = pauli_model("rho_only", z=z)
    for rho in (-3.0, 0.0, 0.05, 2.0):
        expected = z * z / (4 * (rho * rho + z * z) ** 2)
        assert qgt_spectral(m, rho).g[0, 0] == pytest.approx(expected, rel=1e-12)


def test_pullback_to_angle():
    m = pauli_model("rho_only", z=1.0)
    for theta in (0.1, 0.7, 1.2):
        gt = qgt_spectral(m, math.tan(theta))
        jac = [[1 / math.cos(theta) ** 2]]
        assert pullback(gt, jac).g[0, 0] == pytest.approx(0.25, rel=1e-12)
    with pytest.raises(ShapeMismatch):
        pullback(gt, [[1, 0], [0, 1]])
    with pytest.raises(ValueError):
        pullback(gt, [[math.nan]])


@pytest.mark.parametrize("eps", [0.0, 50.0, 99.0, 100.0, 101.0, 150.0])
def test_dqd3_against_overlap_oracle(eps):
    m = dqd3_model(FIG5)
    g = qgt_spectral(m, eps).g[0, 0]
    ref = overlap_metric(m.h_at, eps, 1e-4)
    assert g == pytest.approx(ref, rel=1e-5)
    assert qgt_fd_oracle(m, eps, 1e-4) == pytest.approx(g, rel=1e-5)


def zoo():
    return [
        (pauli_model("cylindrical"), lambda r: [r.uniform(0.2, 2), r.uniform(0, 6), r.uniform(-2, 2)]),
        (pauli_model("bloch"), lambda r: [r.uniform(0.2, 2.9), r.uniform(0, 6)]),
        (dqd3_model(FIG5), lambda r: [r.uniform(0, 200)]),
        (dqd6_model(FIG3), lambda r: [r.uniform(0, 200)]),
        (sw2_model(10, 1), lambda r: [r.uniform(-50, 50)]),
    ]


def test_tangent_matches_spectral(rng):
    for model, draw in zoo():
        for _ in range(5):
            x = draw(rng)
            a, b = qgt_spectral(model, x), qgt_tangent(model, x)
            scale = np.abs(a.g).max()
            np.testing.assert_allclose(b.g, a.g, atol=1e-6 * scale, rtol=1e-6)
            np.testing.assert_allclose(b.berry, a.berry, atol=1e-6 * max(scale, 1e-300))


def test_metric_curve_matches_dense_oracle():
    m = dqd3_model(FIG5)
    xs = np.linspace(0, 200, 101)
    ref = spectral_metric_dense(m.h_at, lambda x: m.dh_at(x, 0), xs)
    np.testing.assert_allclose(metric_curve(m, xs), ref, rtol=1e-10)
    with pytest.raises(ShapeMismatch):
        metric_curve(pauli_model("bloch"), xs)


def test_energy_shift_invariance():
    m = dqd3_model(FIG5)
    shifted = AffineHamiltonian(m.h0 + 7.5 * np.eye(3), m.coefficients, m.param_names)
    for eps in (20.0, 100.0, 180.0):
        assert qgt_spectral(shifted, eps).g[0, 0] == pytest.approx(qgt_spectral(m, eps).g[0, 0], rel=1e-12)


@given(seed=st.integers(0, 2**32 - 1))
def test_metric_is_psd_and_berry_antisymmetric(seed):
    r = np.random.default_rng(seed)
    h0, h1, h2 = (random_hermitian(r, 4) for _ in range(3))
    m = AffineHamiltonian(h0, [h1, h2], ("a", "b"))
    gt = qgt_spectral(m, r.normal(size=2))
    assert np.all(np.linalg.eigvalsh(gt.g) >= -1e-12 * max(np.abs(gt.g).max(), 1))
    np.testing.assert_allclose(gt.g, gt.g.T)
    np.testing.assert_allclose(gt.berry, -gt.berry.T)
    # q is positive semidefinite as a Hermitian form
    assert np.all(np.linalg.eigvalsh(gt.q) >= -1e-10 * max(np.abs(gt.q).max(), 1))


def test_degenerate_level_raises():
    m = PauliHamiltonian("cylindrical", active=("z",), rho=0.0)
    with pytest.raises(DegenerateSpectrum):
        qgt_spectral(m, [0.0])
    with pytest.raises(DegenerateSpectrum):
        metric_curve(dqd3_model(DQDParams(100, 0, 0)), [100.0])


def test_excited_level():
    gt0 = qgt_spectral(pauli_model("bloch"), [1.0, 0.0], level=0)
    gt1 = qgt_spectral(pauli_model("bloch"), [1.0, 0.0], level=1)
    np.testing.assert_allclose(gt0.g, gt1.g, atol=1e-14)
    np.testing.assert_allclose(gt0.berry, -gt1.berry, atol=1e-14)


def test_geotensor_shape_check():
    with pytest.raises(ShapeMismatch):
        GeoTensor(np.zeros((2, 2)), np.zeros((3, 3)))


def test_estimator():
    m = pauli_model("bloch")
    est = QuantumMetric(m)
    assert est.get_params() == {"model": m, "level": 0, "method": "spectral"}
    out = est.fit_transform([[1.0, 0.0], [0.5, 0.3]])
    names = list(est.get_feature_names_out())
    assert names == ["g_theta_theta", "g_theta_phi", "g_phi_phi", "berry_theta_phi", "det_g"]
    assert out.shape == (2, 5)
    assert out[0, 0] == pytest.approx(0.25)
    assert out[0, 4] == pytest.approx(math.sin(1.0) ** 2 / 16)
    tangent = QuantumMetric(m, method="tangent").fit().transform([[1.0, 0.0]])
    np.testing.assert_allclose(tangent, out[:1], atol=1e-7)
    with pytest.raises(ValueError):
        QuantumMetric(m, method="bogus").fit()
    with pytest.raises(ValueError):
        QuantumMetric().fit()
