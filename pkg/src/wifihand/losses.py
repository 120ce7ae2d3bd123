"""Training objectives: focal mask loss, joint regression, bone-length
and palmar-structure constraints, covariance alignment, and their
weighted sum.

All functions are torch-differentiable and accept either a single
instance or a leading batch dimension; reduction is the arithmetic
mean.
"""

from dataclasses import dataclass

import numpy as np
import torch

from . import hand_model as hm
from .errors import ShapeError

PROB_EPS = 1e-7
_COS_EPS = 1e-12


@dataclass(frozen=True)
class LossWeights:
    """Balance of the total objective.

    gamma_focal is the mask focusing exponent; gamma_pose weighs the
    bone-length term (the two roles are kept apart deliberately).
    """

    alpha: float = 1.0
    beta: float = 1.0
    gamma_pose: float = 0.1
    lam: float = 0.1
    zeta: float = 0.1
    gamma_focal: float = 2.0

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma_pose", "lam", "zeta", "gamma_focal"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    def as_dict(self):
        return {
            "alpha": self.alpha,
            "beta": self.beta,
            "gamma_pose": self.gamma_pose,
            "lam": self.lam,
            "zeta": self.zeta,
            "gamma_focal": self.gamma_focal,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: float(v) for k, v in d.items()})


def _as_tensor(x, like=None):
    if isinstance(x, torch.Tensor):
        return x
    dtype = like.dtype if isinstance(like, torch.Tensor) else torch.float64
    return torch.as_tensor(np.asarray(x), dtype=dtype)


def _clamp_probs(p):
    return p.clamp(PROB_EPS, 1.0 - PROB_EPS)


def bce_loss(pred, target):
    """Mean binary cross entropy over all mask elements."""
    pred = _as_tensor(pred)
    target = _as_tensor(target, like=pred)
    if pred.shape != target.shape:
        raise ShapeError(f"mask shapes differ: {pred.shape} vs {target.shape}")
    p = _clamp_probs(pred)
    return -(target * torch.log(p) + (1.0 - target) * torch.log(1.0 - p)).mean()


def focal_mask_loss(pred, target, gamma_focal=2.0):
    """BCE reweighted by (1 - m_t)^gamma to emphasize hard elements.

    Reduces exactly to bce_loss at gamma_focal = 0.
    """
    if gamma_focal < 0:
        raise ValueError("gamma_focal must be >= 0")
    pred = _as_tensor(pred)
    target = _as_tensor(target, like=pred)
    if pred.shape != target.shape:
        raise ShapeError(f"mask shapes differ: {pred.shape} vs {target.shape}")
    p = _clamp_probs(pred)
    m_t = torch.where(target > 0.5, p, 1.0 - p)
    return -((1.0 - m_t) ** gamma_focal * torch.log(m_t)).mean()


def joint_loss(pred, target, kind="squared"):
    """Mean per-joint distance between poses.

    ``squared`` (default) averages squared Euclidean distances;
    ``absolute`` averages plain Euclidean distances.
    """
    pred = _as_tensor(pred)
    target = _as_tensor(target, like=pred)
    if pred.shape[-2:] != (hm.N_JOINTS, 3) or pred.shape != target.shape:
        raise ShapeError(f"poses must be ...x21x3, got {pred.shape}/{target.shape}")
    sq = ((pred - target) ** 2).sum(dim=-1)
    if kind == "squared":
        return sq.mean()
    if kind == "absolute":
        return torch.sqrt(sq + 1e-18).mean()
    raise ValueError(f"unknown joint loss kind: {kind}")


def bone_vectors(pose, topo=None):
    """Child-minus-parent bone vectors, batched; rows per bone_order."""
    topo = topo or hm.default_topology()
    pose = _as_tensor(pose)
    order = np.asarray(topo.bone_order)
    parents = torch.as_tensor(order[:, 0], dtype=torch.long)
    children = torch.as_tensor(order[:, 1], dtype=torch.long)
    return pose[..., children, :] - pose[..., parents, :]


def range_penalty(x, lo, hi):
    lo = _as_tensor(lo, like=x)
    hi = _as_tensor(hi, like=x)
    return torch.relu(lo - x) + torch.relu(x - hi)


def bone_length_loss(pose, table=None, topo=None):
    """Mean hinge penalty of the 15 finger-bone lengths vs the table."""
    table = table or hm.default_bone_length_table()
    bones = bone_vectors(pose, topo)[..., hm.N_FINGERS:, :]
    lengths = torch.sqrt((bones**2).sum(dim=-1) + 1e-18)
    return range_penalty(lengths, table.lo, table.hi).mean()


def cmc_geometry(bones):
    """Angles and curvatures of the CMC fan, batched torch version.

    Mirrors hand_model.cmc_angles / cmc_curvatures; the numpy pair
    serves as the independent oracle in tests.
    """
    cmc = bones[..., : hm.N_FINGERS, :]
    unit = cmc / torch.linalg.norm(cmc, dim=-1, keepdim=True)
    cos = (unit[..., :-1, :] * unit[..., 1:, :]).sum(dim=-1)
    phi = torch.arccos(cos.clamp(-1.0 + _COS_EPS, 1.0 - _COS_EPS))

    diff = cmc[..., 1:, :] - cmc[..., :-1, :]
    diff_sq = (diff**2).sum(dim=-1)
    cr = torch.cross(cmc[..., 1:, :], cmc[..., :-1, :], dim=-1)
    n = cr / torch.linalg.norm(cr, dim=-1, keepdim=True)
    mid = n[..., 1:, :] + n[..., :-1, :]
    mid = mid / torch.linalg.norm(mid, dim=-1, keepdim=True)
    e = torch.cat([n[..., :1, :], mid, n[..., -1:, :]], dim=-2)
    c = ((e[..., 1:, :] - e[..., :-1, :]) * diff).sum(dim=-1) / diff_sq
    return phi, c


def palmar_loss(pose, table=None, topo=None):
    """Mean hinge penalty of the four CMC angles and curvatures."""
    table = table or hm.default_palmar_table()
    bones = bone_vectors(pose, topo)
    phi, c = cmc_geometry(bones)
    pen = range_penalty(c, table.c_lo, table.c_hi) + range_penalty(
        phi, table.phi_lo, table.phi_hi
    )
    return pen.mean()


def latent_covariance(s):
    """Sample covariance per the mean-outer-product correction form."""
    s = _as_tensor(s)
    if s.ndim != 2:
        raise ShapeError(f"latent batch must be bs x d, got {tuple(s.shape)}")
    bs = s.shape[0]
    if bs < 2:
        raise ValueError("covariance needs batch size >= 2")
    col = s.sum(dim=0, keepdim=True)
    return (s.T @ s - (col.T @ col) / bs) / (bs - 1)


def coral_loss(s1, s2):
    """Squared Frobenius distance of latent covariances, / (4 d^2)."""
    s1 = _as_tensor(s1)
    s2 = _as_tensor(s2, like=s1)
    if s1.shape[-1] != s2.shape[-1]:
        raise ShapeError("latent dimensions differ between domains")
    d = s1.shape[-1]
    diff = latent_covariance(s1) - latent_covariance(s2)
    return (diff**2).sum() / (4.0 * d * d)


def total_loss(mask_term, joint_term, bone_term, palmar_term, coral_term,
               weights):
    """alpha*L_M + beta*L_J + gamma_pose*L_BL + lambda*L_P + zeta*L_CORAL.

    Absent terms (None) are dropped; a zero weight removes the term's
    gradient entirely.
    """
    total = None
    for w, term in (
        (weights.alpha, mask_term),
        (weights.beta, joint_term),
        (weights.gamma_pose, bone_term),
        (weights.lam, palmar_term),
        (weights.zeta, coral_term),
    ):
        if term is None or w == 0.0:
            continue
        piece = w * term
        total = piece if total is None else total + piece
    if total is None:
        return torch.zeros((), dtype=torch.float64)
    return total
