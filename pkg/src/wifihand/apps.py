"""Downstream demos on top of the frozen backbone: gesture
classification through a single affine head, and index-finger 3D
tracking from per-sample pose predictions."""

import hashlib
from dataclasses import dataclass, field

import numpy as np
import torch

from . import hand_model as hm
from . import simulator as sim
from .errors import ConfigError, ShapeError
from .network import stacked_batch

# fingertip = DIP joint of the index finger (the model carries no
# separate tip joint)
INDEX_TIP_JOINT = 1 + 4 * 1 + 3

HEAD_TAPS = ("latent", "pose", "mask_pooled")
_MASK_POOL = 8


def state_hash(model):
    """Stable digest of all backbone weights (frozen-backbone guard)."""
    h = hashlib.sha256()
    for name, tensor in sorted(model.state_dict().items()):
        h.update(name.encode())
        h.update(np.ascontiguousarray(tensor.detach().numpy(), dtype="<f4").tobytes())
    return h.hexdigest()


def head_features(model, x, tap="latent"):
    """Frozen-backbone feature tap for the classification head."""
    if tap not in HEAD_TAPS:
        raise ConfigError(f"unknown head tap {tap!r}")
    with torch.no_grad():
        mask_logits, pose, r = model(x)
        if tap == "latent":
            return r
        if tap == "pose":
            return pose.flatten(1)
        if mask_logits is None:
            raise ConfigError("mask_pooled tap needs a multi-task backbone")
        probs = torch.sigmoid(mask_logits).unsqueeze(1)
        pooled = torch.nn.functional.adaptive_avg_pool2d(probs, _MASK_POOL)
        return pooled.flatten(1)


@dataclass
class GestureHead:
    """Single affine map + softmax over a backbone feature tap."""

    linear: torch.nn.Linear
    tap: str = "latent"

    @property
    def n_classes(self):
        return self.linear.out_features

    def probabilities(self, feats):
        return torch.softmax(self.linear(feats), dim=-1)


def train_gesture_head(model, samples, n_classes, tap="latent", epochs=200,
                       lr=0.05, seed=0):
    """Fit the affine head on frozen-backbone features.

    The backbone is never updated; only the head's affine parameters
    are optimized (multinomial cross entropy).
    """
    labels = torch.as_tensor([s.gesture_id for s in samples], dtype=torch.long)
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ConfigError("gesture ids outside the head's class range")
    x = stacked_batch([s.csi for s in samples])
    model.eval()
    feats = head_features(model, x, tap)
    torch.manual_seed(seed)
    head = GestureHead(linear=torch.nn.Linear(feats.shape[1], n_classes), tap=tap)
    opt = torch.optim.Adam(head.linear.parameters(), lr=lr)
    for _ in range(epochs):
        opt.zero_grad()
        logits = head.linear(feats)
        loss = torch.nn.functional.cross_entropy(logits, labels)
        loss.backward()
        opt.step()
    return head


def classify_gesture(model, head, csi_values):
    """(class id, probabilities) for one raw CSI window."""
    x = stacked_batch([csi_values])
    feats = head_features(model, x, head.tap)
    with torch.no_grad():
        probs = head.probabilities(feats)[0].numpy()
    return int(np.argmax(probs)), probs


def classification_accuracy(model, head, samples):
    correct = 0
    for s in samples:
        pred, _ = classify_gesture(model, head, s.csi)
        correct += pred == s.gesture_id
    return correct / len(samples)


# ---------------------------------------------------------------------------
# finger tracking


@dataclass
class FingerTrack:
    """Time-ordered index-fingertip positions in pose units."""

    points: np.ndarray
    smooth_window: int = 1

    def __len__(self):
        return len(self.points)


def moving_average(points, window):
    """Centered moving average with shrinking edge windows."""
    if window <= 1:
        return np.asarray(points, dtype=np.float64)
    points = np.asarray(points, dtype=np.float64)
    out = np.empty_like(points)
    half = window // 2
    for i in range(len(points)):
        lo = max(0, i - half)
        hi = min(len(points), i + half + 1)
        out[i] = points[lo:hi].mean(axis=0)
    return out


def track_finger(model, csi_stream, smooth_window=3):
    """Per-frame fingertip extraction from a stream of CSI windows.

    Inference is strictly per frame; smoothing (recorded in the track
    metadata) is the only cross-frame coupling.
    """
    csi_stream = list(csi_stream)
    if not csi_stream:
        raise ValueError("empty sample stream")
    x = stacked_batch(csi_stream)
    model.eval()
    with torch.no_grad():
        _, poses, _ = model(x)
    tips = poses[:, INDEX_TIP_JOINT, :].numpy().astype(np.float64)
    return FingerTrack(points=moving_average(tips, smooth_window),
                       smooth_window=smooth_window)


def template_trajectory(name, n_points=60, scale=0.45, center=(0.5, 0.5, 0.5)):
    """Planar fingertip templates: 'triangle', 'z', 'd' (closed
    half-circle)."""
    cx, cy, cz = center
    s = scale / 2.0
    t = np.linspace(0.0, 1.0, n_points, endpoint=False)
    if name == "triangle":
        verts = np.array([[0.0, -s], [s, s], [-s, s], [0.0, -s]])
    elif name == "z":
        verts = np.array([[-s, -s], [s, -s], [-s, s], [s, s]])
    elif name == "d":
        u = np.linspace(0.0, 1.0, n_points, endpoint=False)
        n_bar = n_points // 3
        bar = np.column_stack([np.full(n_bar, -s),
                               np.linspace(s, -s, n_bar, endpoint=False)])
        arc_t = np.linspace(-np.pi / 2, np.pi / 2, n_points - n_bar,
                            endpoint=False)
        arc = np.column_stack([-s + np.cos(arc_t) * s, np.sin(arc_t) * s])
        xy = np.vstack([bar, arc])
        return np.column_stack([cx + xy[:, 0], cy + xy[:, 1],
                                np.full(n_points, cz)])
    else:
        raise ValueError(f"unknown template {name!r}")
    # arc-length parameterization over the polyline
    seg = np.linalg.norm(np.diff(verts, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    dist = t * cum[-1]
    xy = np.empty((n_points, 2))
    for i, dd in enumerate(dist):
        k = min(np.searchsorted(cum, dd, side="right") - 1, len(seg) - 1)
        frac = (dd - cum[k]) / seg[k]
        xy[i] = verts[k] + frac * (verts[k + 1] - verts[k])
    return np.column_stack([cx + xy[:, 0], cy + xy[:, 1],
                            np.full(n_points, cz)])


def is_closed(points, tol=1e-6):
    points = np.asarray(points)
    gap = np.linalg.norm(points[0] - (points[-1] + (points[1] - points[0])))
    # closed means the sampled loop wraps: last point's successor is the start
    return gap <= max(tol, 2.0 * np.linalg.norm(points[1] - points[0]))


def poses_along_track(points, params=sim.DEFAULT_SAMPLER):
    """Translate a canonical open hand so the index fingertip follows
    the given trajectory."""
    base = sim.canonical_open_pose(params)
    offset = np.asarray(points, dtype=np.float64)[:, None, :] - base[INDEX_TIP_JOINT]
    return base[None, :, :] + offset


@dataclass
class DriftStats:
    start_errors: np.ndarray
    slope: float


def no_drift_check(track_points, template, n_loops):
    """Per-loop start-point error and its trend over loop index.

    A method with accumulating error shows a positive slope; per-frame
    inference should show a slope statistically indistinguishable from
    zero.
    """
    if n_loops < 3:
        raise ValueError("need at least 3 loops")
    template = np.asarray(template, dtype=np.float64)
    if not is_closed(template):
        raise ValueError("drift check needs a closed template")
    track_points = np.asarray(track_points, dtype=np.float64)
    loop_len = len(template)
    if len(track_points) != n_loops * loop_len:
        raise ShapeError("track length must be n_loops * len(template)")
    errs = np.array([
        np.linalg.norm(track_points[k * loop_len] - template[0])
        for k in range(n_loops)
    ])
    slope = float(np.polyfit(np.arange(n_loops), errs, 1)[0])
    return DriftStats(start_errors=errs, slope=slope)


def export_track(path, track, timestamps=None):
    """Ordered text records: t x y z per line."""
    pts = track.points
    ts = timestamps if timestamps is not None else np.arange(len(pts))
    with open(path, "w") as fh:
        fh.write(f"# smooth_window = {track.smooth_window}\n")
        for t, p in zip(ts, pts):
            fh.write(f"{t} {p[0]:.9g} {p[1]:.9g} {p[2]:.9g}\n")
