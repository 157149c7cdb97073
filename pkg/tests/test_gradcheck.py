import pytest

from driftlab import autodiff as ad
from driftlab.autodiff import Rng, Tensor, _result
from driftlab.gradcheck import numeric_gradient_check, run_gradcheck


def test_all_checks_pass_within_tolerance():
    report = run_gradcheck(seed=0)
    names = {r.name for r in report.results}
    assert {"matmul", "cross_entropy", "gumbel_softmax_st", "gumbel_pipeline"} <= names
    assert report.passed, [(r.name, r.max_rel_error) for r in report.results]
    assert report.max_rel_error < 1e-4


def test_a_wrong_backward_rule_is_caught():
    x = Tensor(Rng(0).uniform(-1, 1, size=(3,)), requires_grad=True)

    def broken_square():
        return ad.sum(_result(x.data ** 2, (x,), lambda g: (g * x.data,)))

    assert numeric_gradient_check(broken_square, [x], Rng(1), probes=5) > 0.1
    assert x.grad is None


@pytest.mark.slow
def test_straight_through_check_over_a_thousand_logit_vectors():
    report = run_gradcheck(seed=3, gumbel_rows=1000)
    result = next(r for r in report.results if r.name == "gumbel_softmax_st")
    assert result.max_rel_error < report.tolerance
