"""One test per acceptance criterion; each prints a single PASS/FAIL line.

Criteria 9 and 10 train three 8-layer flows for 2000 epochs (about a minute
in total on one core).
"""

import pytest

from conftest import ACCEPTANCE_LINES
from kahlerflow import verify

CRITERIA = {
    1: verify.check_change_of_variables,
    2: verify.check_fisher_pullback,
    3: verify.check_ricci_oracle,
    4: verify.check_jacobi,
    5: verify.check_nkrf_recursion,
    6: verify.check_kl_dissipation,
    7: verify.check_perelman,
    8: verify.check_surgery,
    11: verify.check_gradients,
    12: verify.check_diagnostics_zero,
}


def report(result):
    line = result.line()
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert result.passed, line
    assert result.in_budget, f"over the {result.budget}s budget: {line}"


@pytest.mark.parametrize("criterion", sorted(CRITERIA))
def test_identity_criterion(criterion):
    report(verify.timed(CRITERIA[criterion]))


@pytest.mark.slow
@pytest.mark.parametrize("dataset", verify.TRAIN_DATASETS)
def test_criterion_9_training(dataset):
    report(verify.timed(lambda: verify.check_training(dataset)))


@pytest.mark.slow
def test_criterion_10_holomorphic_bias():
    verify.trained_run("fractal_tree")  # training is budgeted under criterion 9
    report(verify.timed(verify.check_holomorphic_bias))


@pytest.mark.slow
@pytest.mark.xfail(strict=True, reason=(
    "known failure at the default training settings: single minibatches spike to NLL ~1e7-1e9 when a point "
    "falls where earlier couplings contract strongly, and even a median-filtered curve rises 4-5% in the "
    "final half on two_moons and fractal_tree"))
@pytest.mark.parametrize("dataset", verify.TRAIN_DATASETS)
def test_smoothed_loss_settles(dataset):
    # window-50 moving average stays within 1% above its running minimum over the final half
    rise = verify.smoothed_tail_rise(verify.trained_run(dataset).curve, 50)
    print(f"{dataset}: smoothed tail rise {rise:.3e}")
    assert rise <= 0.01
