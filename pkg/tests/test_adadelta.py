import numpy as np
import pytest

from mrtherm.nn.adadelta import Adadelta


def test_zero_gradient_leaves_parameters():
    w = np.array([1.0, -2.0, 3.0])
    opt = Adadelta({"w": w}, learning_rate=0.5)
    before = w.copy()
    opt.step({"w": np.zeros(3)})
    assert np.array_equal(w, before)


def test_first_step_closed_form():
    lr, rho, eps = 0.1, 0.95, 1e-6
    g = np.array([0.3, -1.2])
    w = np.array([0.0, 0.0])
    opt = Adadelta({"w": w}, learning_rate=lr, rho=rho, epsilon=eps)
    opt.step({"w": g})
    expect = -lr * np.sqrt(eps) / np.sqrt((1 - rho) * g ** 2 + eps) * g
    assert np.abs(w - expect).max() < 1e-15


def test_repeated_gradient_recurrence():
    # scalar recurrence for identical unit gradients: E[g^2] climbs
    # monotonically toward g^2, so the RMS normalizer 1/sqrt(E[g^2]+eps)
    # shrinks monotonically
    opt = Adadelta({"w": np.array([0.0])}, learning_rate=1.0)
    eg = []
    for _ in range(6):
        opt.step({"w": np.array([1.0])})
        eg.append(opt.acc_grad2["w"].item())
    assert all(b > a for a, b in zip(eg, eg[1:]))
    assert eg[-1] < 1.0
    norms = [1.0 / np.sqrt(v + 1e-6) for v in eg]
    assert all(b < a for a, b in zip(norms, norms[1:]))


def test_descends_quadratic():
    # Adadelta ramps its effective step from sqrt(eps); give it room
    w = np.array([5.0])
    opt = Adadelta({"w": w}, learning_rate=1.0)
    for _ in range(2000):
        opt.step({"w": 2 * w})
    assert abs(w[0]) < 1e-6


def test_validation():
    with pytest.raises(ValueError):
        Adadelta({"w": np.zeros(1)}, learning_rate=0.0)
    with pytest.raises(ValueError):
        Adadelta({"w": np.zeros(1)}, rho=1.0)
    opt = Adadelta({"w": np.zeros(2)})
    with pytest.raises(ValueError):
        opt.step({"w": np.zeros(3)})
