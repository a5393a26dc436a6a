"""Losses and the location-error metric.

MSE is the per-pixel mean of squared residuals per sample, then averaged
over the batch. The robust variant takes, per sample, min(m, exp(-2e4 * m))
of that sample's MSE m: identical to MSE for small residuals, exponentially
suppressed past the crossover m* ~ 3.92e-4, which down-weights samples whose
labels are badly wrong. Ties at the crossover follow the MSE branch.

MLE is the mean Euclidean distance between predicted and labeled centers at
input-image scale, reported for all samples and for the eyed / non-eyed
splits separately.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from tclnet.errors import ContractError, ShapeError
from tclnet.tensor import Tensor, exp, minimum, mul, reduce_mean, sub

TCL_SUPPRESSION = 2.0e4


@dataclass
class LossValue:
    per_sample: List[float]
    batch: Tensor

    @property
    def value(self) -> float:
        return self.batch.item()


def _per_sample_mse(pred: Tensor, target: Tensor) -> Tensor:
    if not isinstance(pred, Tensor) or not isinstance(target, Tensor):
        raise ContractError("loss arguments must be tensors")
    if pred.data.shape != target.data.shape:
        raise ShapeError(f"loss shape mismatch {pred.data.shape} vs "
                         f"{target.data.shape}")
    if pred.data.ndim != 4:
        raise ShapeError(f"loss expects (B,C,H,W) maps, got {pred.data.shape}")
    diff = sub(pred, target)
    return reduce_mean(mul(diff, diff), axes=(1, 2, 3))  # (B,)


def mse_loss(pred: Tensor, target: Tensor) -> LossValue:
    per = _per_sample_mse(pred, target)
    return LossValue(per_sample=[float(v) for v in per.data],
                     batch=reduce_mean(per))


def tcl_plus_loss(pred: Tensor, target: Tensor) -> LossValue:
    per_mse = _per_sample_mse(pred, target)
    # min's gradient follows the first operand on ties, i.e. the MSE branch
    per = minimum(per_mse, exp(mul(per_mse, -TCL_SUPPRESSION)))
    return LossValue(per_sample=[float(v) for v in per.data],
                     batch=reduce_mean(per))


LOSSES = {"mse": mse_loss, "tcl+": tcl_plus_loss}


def tcl_crossover(tol=1e-12) -> float:
    """Fixed point of m = exp(-2e4 * m), the branch boundary, by bisection."""
    lo, hi = 0.0, 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mid < np.exp(-TCL_SUPPRESSION * mid):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass
class MleReport:
    n_all: int
    n_eyed: int
    n_non_eyed: int
    mle_all: float
    mle_eyed: Optional[float]
    mle_non_eyed: Optional[float]

    def csv_row(self, run_id: str) -> str:
        def cell(v):
            return "" if v is None else f"{v:.4f}"
        return (f"{run_id},{self.n_all},{cell(self.mle_all)},"
                f"{cell(self.mle_eyed)},{cell(self.mle_non_eyed)}")

    CSV_HEADER = "run_id,n_all,mle_all,mle_eyed,mle_non_eyed"


def mle(preds, labels, eyed_flags) -> MleReport:
    """Mean location error in input pixels, with eyed/non-eyed splits.

    The all-samples figure is the mean over the union, not the mean of the
    two split means. An empty split is reported as absent (None), not zero.
    """
    if not (len(preds) == len(labels) == len(eyed_flags)):
        raise ContractError(f"length mismatch: {len(preds)} predictions, "
                            f"{len(labels)} labels, {len(eyed_flags)} flags")
    if not preds:
        raise ContractError("mle of an empty sample set")
    d = np.array([np.hypot(p.u - l.u, p.v - l.v)
                  for p, l in zip(preds, labels)], dtype=np.float64)
    eyed = np.asarray(eyed_flags, dtype=bool)
    n_eyed = int(eyed.sum())
    n_non = int((~eyed).sum())
    return MleReport(
        n_all=len(d),
        n_eyed=n_eyed,
        n_non_eyed=n_non,
        mle_all=float(d.mean()),
        mle_eyed=float(d[eyed].mean()) if n_eyed else None,
        mle_non_eyed=float(d[~eyed].mean()) if n_non else None,
    )
