import numpy as np
import pytest

from dicke_breakdown.integrate import StepSizeUnderflow, dopri5, rk4_fixed


def test_exponential_decay_error_bounded():
    sol = dopri5(lambda t, y: -y, (0.0, 10.0), np.array([1.0]), rtol=1e-10, atol=1e-12)
    assert sol.y_final[0] == pytest.approx(np.exp(-10.0), rel=1e-8)


def test_complex_rotation_hits_samples_exactly():
    ts = [0.0, 0.5, 1.7, 3.0]
    sol = dopri5(lambda t, y: 1j * y, (0.0, 3.0), np.array([1.0 + 0j]), rtol=1e-10, atol=1e-10, t_eval=ts)
    assert sol.t == ts
    for t, y in zip(sol.t, sol.y):
        assert abs(y[0] - np.exp(1j * t)) < 1e-8


def test_stop_callback_ends_run():
    sol = dopri5(lambda t, y: y, (0.0, 100.0), np.array([1.0]), rtol=1e-8, atol=1e-8,
                 stop=lambda t, y: "overflow" if y[0] > 1e6 else None)
    assert sol.status == "overflow"
    assert sol.t_final < 100.0


def test_blowup_raises_underflow():
    # y' = y^2 blows up at t = 1
    with pytest.raises(StepSizeUnderflow) as err:
        dopri5(lambda t, y: y**2, (0.0, 2.0), np.array([1.0]), rtol=1e-8, atol=1e-8)
    assert err.value.solution.t_final < 1.0 + 1e-6


def test_rk4_fourth_order():
    errs = []
    for dt in (0.1, 0.05):
        sol = rk4_fixed(lambda t, y: -y, (0.0, 1.0), np.array([1.0]), dt=dt)
        errs.append(abs(sol.y_final[0] - np.exp(-1.0)))
    assert 12 < errs[0] / errs[1] < 20


def test_rk4_samples():
    sol = rk4_fixed(lambda t, y: -y, (0.0, 1.0), np.array([1.0]), dt=0.3, t_eval=[0.0, 0.5, 1.0])
    assert sol.t == [0.0, 0.5, 1.0]
