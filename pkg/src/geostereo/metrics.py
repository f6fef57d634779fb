"""Bad-pixel rate and mean absolute error over pixels with ground truth."""

import json
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ContractError, DegenerateInputError


@dataclass
class EvalReport:
    bad_pct: float
    mae: float
    n_valid: int
    threshold: float

    def to_json(self):
        return json.dumps(asdict(self))

    def __str__(self):
        return (
            f"bad-{self.threshold:g}: {self.bad_pct:.2f}%  MAE: {self.mae:.4f}  "
            f"({self.n_valid} pixels)"
        )


def _errors(pred, gt, max_disparity=None):
    if pred.shape != gt.shape:
        raise ContractError(f"prediction {pred.shape} and ground truth {gt.shape} differ in shape")
    # pixels without a usable prediction cannot be scored; they are not silently counted
    mask = gt.valid & pred.valid
    if max_disparity is not None:
        mask &= gt.filled <= max_disparity
    if not mask.any():
        raise DegenerateInputError("no pixel has both ground truth and a prediction")
    return np.abs(pred.values[mask] - gt.values[mask])


def bad_threshold(pred, gt, tau=2.0, max_disparity=None):
    """Percentage of scored pixels with ``|pred - gt| > tau`` (strict)."""
    err = _errors(pred, gt, max_disparity)
    return 100.0 * np.count_nonzero(err > tau) / err.size


def mae(pred, gt, max_disparity=None):
    return float(np.mean(_errors(pred, gt, max_disparity)))


def evaluate(pred, gt, tau=2.0, max_disparity=None):
    err = _errors(pred, gt, max_disparity)
    return EvalReport(
        bad_pct=100.0 * np.count_nonzero(err > tau) / err.size,
        mae=float(np.mean(err)),
        n_valid=int(err.size),
        threshold=float(tau),
    )
