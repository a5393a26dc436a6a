"""Losses and the location-error metric.

The robust loss per sample is min(m, exp(-2e4*m)) where m is that sample's
mean squared error; the crossover between the two branches is the fixed
point of m = exp(-2e4*m). Checks of the exponential branch run in double
precision: exp(-200) underflows float32.
"""

import math

import numpy as np
import pytest

from tclnet.errors import ContractError, ShapeError
from tclnet.heatmap import CenterLabel
from tclnet.objective import (LOSSES, MleReport, mle, mse_loss, tcl_crossover,
                              tcl_plus_loss)
from tclnet.tensor import Tensor, backward


def _batches_with_per_sample_mse(values):
    """Predictions/targets engineered to give exactly these per-sample MSEs."""
    n = len(values)
    pred = np.zeros((n, 1, 4, 4), dtype=np.float64)
    for i, m in enumerate(values):
        pred[i, 0] = math.sqrt(m)
    target = np.zeros_like(pred)
    return Tensor(pred, dtype="double"), Tensor(target, dtype="double")


def test_mse_per_sample_and_batch_mean():
    pred, target = _batches_with_per_sample_mse([0.04, 0.09])
    loss = mse_loss(pred, target)
    assert np.allclose(loss.per_sample, [0.04, 0.09], atol=1e-15)
    assert loss.value == pytest.approx(0.065, abs=1e-12)


def test_mse_gradient_closed_form():
    pred = Tensor(np.full((1, 1, 2, 2), 3.0), requires_grad=True, dtype="double")
    target = Tensor(np.ones((1, 1, 2, 2)), dtype="double")
    loss = mse_loss(pred, target)
    backward(loss.batch)
    # d/dp mean((p-t)^2) = 2(p-t)/npix
    assert np.allclose(pred.grad, 2.0 * 2.0 / 4.0)


def test_loss_shape_contract():
    with pytest.raises(ShapeError):
        mse_loss(Tensor(np.zeros((2, 1, 4, 4))), Tensor(np.zeros((2, 1, 4, 5))))
    with pytest.raises(ShapeError):
        mse_loss(Tensor(np.zeros((4, 4))), Tensor(np.zeros((4, 4))))


def test_tcl_plus_equals_mse_below_crossover():
    small = [1e-5, 1e-4, 3e-4]
    pred, target = _batches_with_per_sample_mse(small)
    loss = tcl_plus_loss(pred, target)
    assert np.allclose(loss.per_sample, small, rtol=1e-12)


def test_tcl_plus_equals_suppression_above_crossover():
    big = [6e-4, 1e-3, 1e-2]
    pred, target = _batches_with_per_sample_mse(big)
    loss = tcl_plus_loss(pred, target)
    expect = [math.exp(-2.0e4 * m) for m in big]
    assert np.allclose(loss.per_sample, expect, rtol=1e-9)


def test_tcl_plus_mixed_batch_takes_elementwise_min():
    values = [1e-4, 1e-3]
    pred, target = _batches_with_per_sample_mse(values)
    loss = tcl_plus_loss(pred, target)
    assert loss.per_sample[0] == pytest.approx(1e-4, rel=1e-12)
    assert loss.per_sample[1] == pytest.approx(math.exp(-20.0), rel=1e-9)


def test_tcl_plus_gradient_routes_to_active_branch():
    pred, target = _batches_with_per_sample_mse([1e-5, 1e-2])
    pred.requires_grad = True
    loss = tcl_plus_loss(pred, target)
    backward(loss.batch)
    g = loss.per_sample  # sanity anchor
    # small-error sample: MSE branch, gradient pushes toward the target
    assert np.all(pred.grad[0] > 0.0)
    # large-error sample: exp branch; d/dm exp(-2e4 m) < 0 flips the sign
    assert np.all(pred.grad[1] < 0.0)
    assert g[1] < g[0]


def test_tcl_crossover_bisection_oracle():
    m = tcl_crossover()
    # independent endpoints: m < exp(-2e4 m) at 3.9e-4, > at 3.95e-4
    assert 3.9e-4 < m < 3.95e-4
    assert m == pytest.approx(3.9219e-4, abs=1e-7)
    assert m == pytest.approx(math.exp(-2.0e4 * m), abs=1e-10)


def test_losses_registry():
    assert set(LOSSES) == {"mse", "tcl+"}


def test_mle_union_mean_and_splits():
    preds = [CenterLabel(0.0, 3.0), CenterLabel(4.0, 0.0), CenterLabel(0.0, 0.0)]
    labels = [CenterLabel(0.0, 0.0)] * 3
    report = mle(preds, labels, [True, False, True])
    assert report.n_all == 3 and report.n_eyed == 2 and report.n_non_eyed == 1
    assert report.mle_all == pytest.approx((3 + 4 + 0) / 3.0)
    assert report.mle_eyed == pytest.approx(1.5)
    assert report.mle_non_eyed == pytest.approx(4.0)


def test_mle_empty_split_reports_absent():
    preds = [CenterLabel(1.0, 0.0)]
    labels = [CenterLabel(0.0, 0.0)]
    report = mle(preds, labels, [True])
    assert report.mle_eyed == pytest.approx(1.0)
    assert report.mle_non_eyed is None
    assert report.n_non_eyed == 0


def test_mle_contract_errors():
    with pytest.raises(ContractError):
        mle([], [], [])
    with pytest.raises(ContractError):
        mle([CenterLabel(0, 0)], [], [True])


def test_report_csv_row_four_decimals_and_empty_cells():
    report = MleReport(n_all=5, n_eyed=5, n_non_eyed=0,
                       mle_all=4.51371, mle_eyed=4.0, mle_non_eyed=None)
    row = report.csv_row("run7")
    assert row == "run7,5,4.5137,4.0000,"
    assert MleReport.CSV_HEADER.split(",")[0] == "run_id"
