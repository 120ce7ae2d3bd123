"""Evaluation metrics: mean pixel accuracy, IoU, MPJPE, PCK and
trajectory-error percentiles."""

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError

MASK_THRESHOLD = 0.5


@dataclass(frozen=True)
class MaskEval:
    """Two-class confusion counts between a binarized prediction and
    the ground-truth mask (class 1 = hand, class 0 = background)."""

    tp: int  # hand predicted hand
    tn: int  # background predicted background
    fp: int  # background predicted hand
    fn: int  # hand predicted background

    @classmethod
    def from_masks(cls, pred, truth, threshold=MASK_THRESHOLD):
        pred = np.asarray(pred)
        truth = np.asarray(truth)
        if pred.shape != truth.shape:
            raise ShapeError(f"mask shapes differ: {pred.shape} vs {truth.shape}")
        p = pred >= threshold
        t = truth >= 0.5
        return cls(
            tp=int(np.sum(p & t)),
            tn=int(np.sum(~p & ~t)),
            fp=int(np.sum(p & ~t)),
            fn=int(np.sum(~p & t)),
        )

    @property
    def total(self):
        return self.tp + self.tn + self.fp + self.fn


def mean_pixel_accuracy(ev):
    """Per-class pixel accuracy averaged over the two classes.

    A class absent from the ground truth is skipped (k reduced); the
    second return value flags that this happened.
    """
    accs = []
    skipped = False
    if ev.tp + ev.fn > 0:
        accs.append(ev.tp / (ev.tp + ev.fn))
    else:
        skipped = True
    if ev.tn + ev.fp > 0:
        accs.append(ev.tn / (ev.tn + ev.fp))
    else:
        skipped = True
    if not accs:
        return 0.0, True
    return float(np.mean(accs)), skipped


def iou(ev):
    """Hand-class intersection over union.

    Both masks empty counts as 1.0; the flag reports that convention
    was used.
    """
    union = ev.tp + ev.fp + ev.fn
    if union == 0:
        return 1.0, True
    return ev.tp / union, False


def mpjpe(pred, truth):
    """Mean Euclidean distance over joints (and batch, when present)."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape or pred.shape[-1] != 3:
        raise ShapeError(f"pose shapes differ: {pred.shape} vs {truth.shape}")
    return float(np.mean(np.linalg.norm(pred - truth, axis=-1)))


@dataclass(frozen=True)
class PckConfig:
    """Correctness threshold in pose coordinate units.

    The default of 0.1 normalized units equals 2 cm at the simulator's
    20 cm-per-unit calibration.
    """

    threshold: float = 0.1

    def __post_init__(self):
        if self.threshold <= 0:
            raise ValueError("PCK threshold must be > 0")

    @classmethod
    def from_cm(cls, cm, cm_per_unit):
        return cls(threshold=cm / cm_per_unit)


def pck(pred, truth, cfg=PckConfig()):
    """Fraction of joints within cfg.threshold of the ground truth."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape or pred.shape[-1] != 3:
        raise ShapeError(f"pose shapes differ: {pred.shape} vs {truth.shape}")
    dist = np.linalg.norm(pred - truth, axis=-1)
    return float(np.mean(dist <= cfg.threshold))


def _nearest_rank(sorted_vals, pct):
    n = len(sorted_vals)
    idx = min(int(np.floor(pct / 100.0 * n)), n - 1)
    return float(sorted_vals[idx])


def trajectory_error_percentiles(pred_track, true_track):
    """(p50, p90) of per-timestep Euclidean errors, nearest-rank."""
    pred_track = np.asarray(pred_track, dtype=np.float64)
    true_track = np.asarray(true_track, dtype=np.float64)
    if pred_track.shape != true_track.shape or len(pred_track) < 1:
        raise ShapeError("tracks must be equal-length and non-empty")
    err = np.sort(np.linalg.norm(pred_track - true_track, axis=-1))
    return _nearest_rank(err, 50.0), _nearest_rank(err, 90.0)


def metric_report(values):
    """Line-oriented report: ``name value count`` per metric."""
    lines = []
    for name, (value, count) in values.items():
        lines.append(f"{name} {value:.6f} {count}")
    return "\n".join(lines) + "\n"
