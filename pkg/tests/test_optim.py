import numpy as np
import pytest

from driftlab import autodiff as ad
from driftlab.autodiff import Tape, Tensor, backward
from driftlab.errors import ParameterError
from driftlab.optim import Adam, clip_grad_norm


def test_adam_step_on_half_squared_norm_moves_every_coordinate_toward_zero():
    theta = Tensor(np.array([3.0, -2.0, 0.5, -0.01]), requires_grad=True)
    before = np.abs(theta.data.copy())
    opt = Adam([theta], lr=1e-3)
    with Tape():
        backward(ad.scale(ad.dot(theta, theta), 0.5))
    opt.step()
    assert np.all(np.abs(theta.data) < before)
    assert opt.state.step == 1


def test_adam_first_step_has_learning_rate_magnitude():
    theta = Tensor(np.array([5.0, -5.0]), requires_grad=True)
    opt = Adam([theta], lr=0.1)
    theta.grad = np.array([2.0, -3.0])
    opt.step()
    assert np.allclose(theta.data, [4.9, -4.9], atol=1e-6)


def test_adam_skips_parameters_without_gradient():
    a = Tensor(np.ones(2), requires_grad=True)
    b = Tensor(np.ones(2), requires_grad=True)
    opt = Adam([a, b])
    a.grad = np.ones(2)
    opt.step()
    assert np.array_equal(b.data, np.ones(2))
    assert not np.array_equal(a.data, np.ones(2))


def test_adam_state_buffers_match_parameter_shapes():
    params = [Tensor(np.zeros((2, 3)), requires_grad=True), Tensor(np.zeros(4), requires_grad=True)]
    opt = Adam(params)
    assert [m.shape for m in opt.state.m] == [(2, 3), (4,)]
    assert [v.shape for v in opt.state.v] == [(2, 3), (4,)]


def test_adam_rejects_nonpositive_learning_rate():
    with pytest.raises(ParameterError):
        Adam([], lr=0.0)


def test_clip_grad_norm_scales_to_max_norm():
    a = Tensor(np.zeros(2), requires_grad=True)
    b = Tensor(np.zeros(1), requires_grad=True)
    a.grad = np.array([3.0, 0.0])
    b.grad = np.array([4.0])
    total = clip_grad_norm([a, b], 1.0)
    assert total == pytest.approx(5.0)
    assert np.sqrt(np.sum(a.grad ** 2) + np.sum(b.grad ** 2)) == pytest.approx(1.0)
