"""Spike nonlinearity: exact forward, closed-form pseudo-derivatives."""
import numpy as np
import pytest

from spikesal.autodiff import SurrogateSpec, Tensor, heaviside


def test_forward_is_strict_threshold():
    u = Tensor(np.array([-1.0, 0.999, 1.0, 1.001, 5.0]))
    s = heaviside(u, 1.0, SurrogateSpec())
    # firing requires strictly exceeding the threshold
    assert np.array_equal(s.data, [0.0, 0.0, 0.0, 1.0, 1.0])


def test_rectangular_pseudo_derivative_closed_form():
    spec = SurrogateSpec(kind="rectangular", width=0.5)
    x = np.array([-1.0, -0.5, -0.25, 0.0, 0.25, 0.5, 1.0])
    want = np.where(np.abs(x) <= 0.5, 1.0, 0.0)
    assert np.array_equal(spec.pseudo_derivative(x), want)


def test_arctan_pseudo_derivative_closed_form():
    w = 0.7
    spec = SurrogateSpec(kind="arctan", width=w)
    x = np.linspace(-3, 3, 13)
    want = 1.0 / (np.pi * w * (1.0 + (x / w) ** 2))
    assert np.allclose(spec.pseudo_derivative(x), want, atol=1e-15)


@pytest.mark.parametrize("kind,width", [("rectangular", 0.5), ("rectangular", 1.5),
                                        ("arctan", 0.5), ("arctan", 2.0)])
def test_pseudo_derivative_integrates_to_one(kind, width):
    spec = SurrogateSpec(kind=kind, width=width)
    # arctan tails decay like 1/x^2, so the window must scale with width
    x = np.linspace(-400 * width, 400 * width, 800001)
    integral = np.trapezoid(spec.pseudo_derivative(x), x)
    assert abs(integral - 1.0) < 1e-2


def test_backward_uses_pseudo_derivative_around_threshold():
    spec = SurrogateSpec(kind="rectangular", width=0.5)
    u = Tensor(np.array([0.6, 1.2, 3.0]), requires_grad=True)
    s = heaviside(u, 1.0, spec)
    s.sum().backward()
    # centered at the threshold: |u - 1| <= 0.5 passes gradient 1
    assert np.array_equal(u.grad, [1.0, 1.0, 0.0])


def test_invalid_spec_rejected():
    with pytest.raises(ValueError):
        SurrogateSpec(kind="cubic")
    with pytest.raises(ValueError):
        SurrogateSpec(width=0.0)
