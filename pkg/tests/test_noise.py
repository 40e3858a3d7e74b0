import numpy as np
import pytest

from geoquad.dynamics import transfer_probability
from geoquad.models import DQDParams, dqd3_model
from geoquad.noise import (
    MiscalibrationSpec,
    QuasistaticSpec,
    box_muller,
    miscalibration_run,
    quasistatic_run,
    sample_stream,
)
from geoquad.pulse import make_pulse

FIG6 = DQDParams(u_tilde=100, omega=3, de_z=0.5)
FAST = {"steps": 4000, "n_samples": 4001}


def test_zero_offset_is_exactly_noiseless():
    m = dqd3_model(FIG6)
    res = quasistatic_run(m, "geometric", 20, QuasistaticSpec(fixed_offsets=(0.0,)), 200, 0, **FAST)
    assert res.fidelity[0] == res.noiseless
    assert res.deviation[0] == 0.0
    nominal = make_pulse("geometric", m, 200, 0, 20, n_samples=4001)
    assert res.noiseless == transfer_probability(m, nominal, steps=4000)


def test_offsets_move_the_fidelity():
    m = dqd3_model(FIG6)
    res = quasistatic_run(m, "geometric", 20, QuasistaticSpec(fixed_offsets=(-5.0, 5.0)), 200, 0, **FAST)
    assert np.all(res.deviation != 0)
    assert np.all(np.abs(res.deviation) < 5e-3)
    # the two signs of the offset do not act symmetrically
    assert res.deviation[0] != pytest.approx(res.deviation[1], rel=1e-3)
    assert res.stats["max_abs_deviation"] == np.max(np.abs(res.deviation))


def test_additive_mode_is_the_shifted_pulse():
    m = dqd3_model(FIG6)
    spec = QuasistaticSpec(fixed_offsets=(2.0,))
    res = quasistatic_run(m, "geometric", 10, spec, 200, 0, mode="additive", **FAST)
    nominal = make_pulse("geometric", m, 200, 0, 10, n_samples=4001)
    assert res.fidelity[0] == transfer_probability(m, nominal.shifted(2.0), steps=4000)
    with pytest.raises(ValueError):
        quasistatic_run(m, "geometric", 10, spec, 200, 0, mode="rigid", **FAST)


def test_streams_are_deterministic_and_distinct():
    a = box_muller(sample_stream(7, 3), 5)
    b = box_muller(sample_stream(7, 3), 5)
    c = box_muller(sample_stream(7, 4), 5)
    np.testing.assert_array_equal(a, b)
    assert not np.allclose(a, c)
    assert len(box_muller(sample_stream(0, 0), 4)) == 4


def test_box_muller_moments():
    z = box_muller(sample_stream(123, 0), 200000)
    assert abs(z.mean()) < 0.01
    assert abs(z.var() - 1) < 0.01
    assert np.all(np.isfinite(z))


def test_gaussian_offsets():
    spec = QuasistaticSpec(sigma=2.0, n_samples=4000, seed=11)
    off = spec.offsets()
    np.testing.assert_array_equal(off, QuasistaticSpec(sigma=2.0, n_samples=4000, seed=11).offsets())
    assert abs(off.std() - 2.0) < 0.1
    # a longer run is a prefix-extension of a shorter one
    np.testing.assert_array_equal(QuasistaticSpec(sigma=2.0, n_samples=10, seed=11).offsets(), off[:10])


def test_spec_validation():
    with pytest.raises(ValueError):
        QuasistaticSpec(sigma=-1)
    with pytest.raises(ValueError):
        QuasistaticSpec(n_samples=0)
    with pytest.raises(ValueError):
        MiscalibrationSpec(1.0, (-1.0,))


def test_miscalibration_grid():
    spec = MiscalibrationSpec(3.0, (-0.5, 0.0, 0.5))
    out = miscalibration_run(spec, [10.0, 40.0], **FAST)
    assert out.shape == (2, 3)
    assert np.all(out[:, 1] == 0)
    assert np.max(np.abs(out[1])) < np.max(np.abs(out[0]))
    # underestimating the coupling hurts more than overestimating it
    assert abs(out[0, 0]) > abs(out[0, 2])
