"""The finite-difference checker itself is verified here: it must accept a
function with a hand-derived correct gradient and, crucially, must *reject*
a deliberately broken backward pass (mutation test)."""

from __future__ import annotations

import numpy as np
import pytest

from gamsi.errors import ContractError, NumericError
from gamsi.gradcheck import grad_check
from gamsi.tensor import Parameter, Tensor


def make_param(name: str, data) -> Parameter:
    return Parameter(name, np.asarray(data, dtype=np.float64), dtype=np.float64)


def test_accepts_correct_gradient_quadratic():
    a = make_param("a", [[1.0, -2.0], [0.5, 3.0]])
    b = make_param("b", [4.0, -1.0])

    def f():
        return (a * a).sum() + (b * 3.0).sum()

    report = grad_check(f, [a, b], n_samples=6)
    assert report.passed
    assert report.max_rel_error < 1e-6
    assert set(report.per_param_max) == {"a", "b"}
    assert report.n_coordinates >= 2  # at least one per parameter
    assert "PASS" in report.summary()


def test_mutation_broken_backward_is_caught():
    # An op whose forward is x -> x^2 but whose backward claims d/dx = x
    # (instead of 2x). The checker must flag it far above tolerance.
    p = make_param("p", [1.5, -0.75, 2.0])

    def broken_square(x: Tensor) -> Tensor:
        out = x.data * x.data

        def bwd(g):
            return (g * x.data,)  # wrong on purpose: should be 2 * x.data

        return Tensor._make(out, (x,), bwd)

    def f():
        return broken_square(p).sum()

    report = grad_check(f, [p], n_samples=3)
    assert not report.passed
    assert report.max_rel_error > 1e-2
    assert "FAIL" in report.summary()


def test_rejects_float32_parameters():
    p = Parameter("w", np.zeros(3), dtype=np.float32)
    with pytest.raises(ContractError):
        grad_check(lambda: (p * p).sum(), [p])


def test_rejects_step_size_out_of_range():
    p = make_param("w", [1.0])
    with pytest.raises(ContractError):
        grad_check(lambda: p.sum(), [p], h=1e-2)
    with pytest.raises(ContractError):
        grad_check(lambda: p.sum(), [p], h=1e-8)


def test_non_finite_loss_raises():
    p = make_param("w", [1.0])

    def f():
        return (p.log() - p.log()).sum() * np.inf

    # inf * scalar isn't representable through the engine; build directly:
    def g():
        return Tensor(np.array(np.inf), dtype=np.float64)

    with pytest.raises(NumericError):
        grad_check(g, [p])


def test_every_parameter_gets_probed():
    params = [make_param(f"p{i}", np.full(max(1, i * 5), 0.3)) for i in range(1, 5)]

    def f():
        total = (params[0] * params[0]).sum()
        for q in params[1:]:
            total = total + (q * q).sum()
        return total

    report = grad_check(f, params, n_samples=4)  # fewer samples than params
    assert set(report.per_param_max) == {p.name for p in params}
