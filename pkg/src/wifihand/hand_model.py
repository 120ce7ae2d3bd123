"""Parameterized 21-joint hand skeleton and its geometric primitives.

Joint layout (0-based): joint 0 is the palm root; fingers occupy four
consecutive indices each, in thumb/index/middle/ring/pinky order, as
CMC, MCP, PIP, DIP.  Bones are child-minus-parent vectors; bones 0-4 are
the five CMC bones (palm fan), bones 5-19 the fifteen finger bones,
grouped finger-major (MCP, PIP, DIP per finger).
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateGeometryError, ShapeError, TopologyError

N_JOINTS = 21
N_BONES = 20
N_FINGERS = 5
N_FINGER_BONES = 15
ROOT = 0

FINGER_NAMES = ("thumb", "index", "middle", "ring", "pinky")
JOINT_KINDS = ("cmc", "mcp", "pip", "dip")


def _finger_joints(q):
    base = 1 + 4 * q
    return (base, base + 1, base + 2, base + 3)


@dataclass(frozen=True)
class SkeletonTopology:
    """Parent map, finger groups and canonical bone ordering."""

    parent: tuple
    finger_groups: tuple
    bone_order: tuple

    def __post_init__(self):
        if len(self.parent) != N_JOINTS or self.parent[ROOT] != -1:
            raise TopologyError("parent map must cover 21 joints with root -1")
        seen = set()
        for i in range(N_JOINTS):
            j, hops = i, 0
            while j != ROOT:
                p = self.parent[j]
                if p < 0 or p >= N_JOINTS or hops > N_JOINTS:
                    raise TopologyError(f"joint {i} does not chain to the root")
                j, hops = p, hops + 1
            seen.add(i)
        if len(self.bone_order) != N_BONES:
            raise TopologyError("bone order must list 20 bones")
        for p, c in self.bone_order:
            if self.parent[c] != p:
                raise TopologyError(f"bone ({p},{c}) contradicts the parent map")
        if len({c for _, c in self.bone_order}) != N_BONES:
            raise TopologyError("bone order repeats a child joint")

    def cmc_bone_indices(self):
        return tuple(range(N_FINGERS))

    def finger_bone_indices(self):
        return tuple(range(N_FINGERS, N_BONES))

    def as_dict(self):
        return {
            "parent": ",".join(str(p) for p in self.parent),
            "bone_order": ";".join(f"{p},{c}" for p, c in self.bone_order),
        }

    @classmethod
    def from_dict(cls, d):
        parent = tuple(int(x) for x in d["parent"].split(","))
        bone_order = tuple(
            tuple(int(x) for x in pair.split(","))
            for pair in d["bone_order"].split(";")
        )
        groups = tuple(_finger_joints(q) for q in range(N_FINGERS))
        return cls(parent=parent, finger_groups=groups, bone_order=bone_order)


def default_topology():
    """Canonical topology: root + 5 kinematic chains, CMC bones first."""
    parent = [-1] * N_JOINTS
    groups = []
    bones_cmc = []
    bones_fingers = []
    for q in range(N_FINGERS):
        cmc, mcp, pip_, dip = _finger_joints(q)
        parent[cmc] = ROOT
        parent[mcp] = cmc
        parent[pip_] = mcp
        parent[dip] = pip_
        groups.append((cmc, mcp, pip_, dip))
        bones_cmc.append((ROOT, cmc))
        bones_fingers += [(cmc, mcp), (mcp, pip_), (pip_, dip)]
    return SkeletonTopology(
        parent=tuple(parent),
        finger_groups=tuple(groups),
        bone_order=tuple(bones_cmc + bones_fingers),
    )


def validate_pose(joints):
    joints = np.asarray(joints, dtype=np.float64)
    if joints.shape != (N_JOINTS, 3):
        raise ShapeError(f"pose must be {N_JOINTS}x3, got {joints.shape}")
    if not np.all(np.isfinite(joints)):
        raise ShapeError("pose contains non-finite coordinates")
    return joints


def bones_from_joints(joints, topo=None):
    """Bone vectors (child minus parent), one row per bone_order entry."""
    topo = topo or default_topology()
    joints = validate_pose(joints)
    order = np.asarray(topo.bone_order)
    return joints[order[:, 1]] - joints[order[:, 0]]


def joints_from_bones(root, bones, topo=None):
    """Inverse of :func:`bones_from_joints` given the root position."""
    topo = topo or default_topology()
    bones = np.asarray(bones, dtype=np.float64)
    if bones.shape != (N_BONES, 3):
        raise ShapeError(f"bones must be {N_BONES}x3, got {bones.shape}")
    joints = np.zeros((N_JOINTS, 3))
    joints[ROOT] = np.asarray(root, dtype=np.float64)
    # bone_order lists parents before children (CMC fan first)
    for (p, c), b in zip(topo.bone_order, bones):
        joints[c] = joints[p] + b
    return joints


def range_penalty(x, a, b):
    """Hinge penalty max(a-x, 0) + max(x-b, 0); zero inside [a, b]."""
    if np.any(np.asarray(a) > np.asarray(b)):
        raise ValueError("range penalty needs a <= b")
    x = np.asarray(x, dtype=np.float64)
    out = np.maximum(a - x, 0.0) + np.maximum(x - b, 0.0)
    return out if out.ndim else float(out)


def cmc_angles(bones):
    """Angles between the four adjacent pairs of CMC bones, in [0, pi]."""
    cmc = np.asarray(bones, dtype=np.float64)[:N_FINGERS]
    norms = np.linalg.norm(cmc, axis=1)
    if np.any(norms < 1e-12):
        raise DegenerateGeometryError("zero-length CMC bone")
    unit = cmc / norms[:, None]
    cosang = np.clip(np.sum(unit[:-1] * unit[1:], axis=1), -1.0, 1.0)
    return np.arccos(cosang)


def _unit(v, axis=-1):
    n = np.linalg.norm(v, axis=axis, keepdims=True)
    if np.any(n < 1e-12):
        raise DegenerateGeometryError("cannot normalize a zero vector")
    return v / n


def cmc_curvatures(bones):
    """Discrete curvature across the four gaps of the CMC fan.

    Edge normals n_i = unit(b_{i+1} x b_i) are averaged into per-bone
    normals e_i (endpoints keep their single neighbor), and the curvature
    over gap i is the normal variation projected on the bone difference.
    """
    cmc = np.asarray(bones, dtype=np.float64)[:N_FINGERS]
    diff = cmc[1:] - cmc[:-1]
    diff_sq = np.sum(diff * diff, axis=1)
    if np.any(diff_sq < 1e-18):
        raise DegenerateGeometryError("consecutive CMC bones coincide")
    n = _unit(np.cross(cmc[1:], cmc[:-1]))
    e = np.empty((N_FINGERS, 3))
    e[0] = n[0]
    e[1:4] = _unit(n[1:] + n[:-1])
    e[4] = n[3]
    return np.sum((e[1:] - e[:-1]) * diff, axis=1) / diff_sq


@dataclass(frozen=True)
class BoneLengthTable:
    """Valid [min, max] length per finger bone (bones 5-19), in
    normalized units."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=np.float64)
        hi = np.asarray(self.hi, dtype=np.float64)
        if lo.shape != (N_FINGER_BONES,) or hi.shape != (N_FINGER_BONES,):
            raise ShapeError("bone length table needs 15 [lo, hi] entries")
        if np.any(lo <= 0.0) or np.any(lo > hi):
            raise ValueError("bone length table needs 0 < lo <= hi")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    def as_dict(self):
        return {
            "bone_length_min": ",".join(f"{v:.9g}" for v in self.lo),
            "bone_length_max": ",".join(f"{v:.9g}" for v in self.hi),
        }

    @classmethod
    def from_dict(cls, d):
        lo = np.array([float(x) for x in d["bone_length_min"].split(",")])
        hi = np.array([float(x) for x in d["bone_length_max"].split(",")])
        return cls(lo=lo, hi=hi)


@dataclass(frozen=True)
class PalmarConstraintTable:
    """Valid angle and curvature ranges for the four CMC gaps."""

    phi_lo: np.ndarray
    phi_hi: np.ndarray
    c_lo: np.ndarray
    c_hi: np.ndarray

    def __post_init__(self):
        arrays = {}
        for name in ("phi_lo", "phi_hi", "c_lo", "c_hi"):
            a = np.asarray(getattr(self, name), dtype=np.float64)
            if a.shape != (4,):
                raise ShapeError("palmar table needs 4 entries per field")
            arrays[name] = a
            object.__setattr__(self, name, a)
        if np.any(arrays["phi_lo"] < 0.0) or np.any(arrays["phi_hi"] > np.pi):
            raise ValueError("phi ranges must lie within [0, pi]")
        if np.any(arrays["phi_lo"] > arrays["phi_hi"]) or np.any(
            arrays["c_lo"] > arrays["c_hi"]
        ):
            raise ValueError("palmar table needs lo <= hi")

    def as_dict(self):
        return {
            "phi_min": ",".join(f"{v:.9g}" for v in self.phi_lo),
            "phi_max": ",".join(f"{v:.9g}" for v in self.phi_hi),
            "curvature_min": ",".join(f"{v:.9g}" for v in self.c_lo),
            "curvature_max": ",".join(f"{v:.9g}" for v in self.c_hi),
        }

    @classmethod
    def from_dict(cls, d):
        parse = lambda key: np.array([float(x) for x in d[key].split(",")])
        return cls(
            phi_lo=parse("phi_min"),
            phi_hi=parse("phi_max"),
            c_lo=parse("curvature_min"),
            c_hi=parse("curvature_max"),
        )


# Frozen defaults, derived from the synthetic pose sampler's parameter
# ranges (lengths: exact sampler bounds widened 1%; angles: analytic
# gap +/- tilt bounds; curvatures: min/max over 2e5 sampled palm fans
# widened 10%).  See simulator.derive_constraint_tables.
_DEFAULT_BL_LO = np.array(
    [0.0990, 0.0693, 0.0495,
     0.1089, 0.0693, 0.0495,
     0.1089, 0.0693, 0.0495,
     0.1089, 0.0693, 0.0495,
     0.0990, 0.0693, 0.0495]
)
_DEFAULT_BL_HI = np.array(
    [0.1313, 0.0909, 0.0707,
     0.1414, 0.0909, 0.0707,
     0.1414, 0.0909, 0.0707,
     0.1414, 0.0909, 0.0707,
     0.1313, 0.0909, 0.0707]
)
_DEFAULT_PALMAR = {
    "phi_lo": np.array([0.35, 0.15, 0.13, 0.15]),
    "phi_hi": np.array([0.75, 0.55, 0.53, 0.55]),
    "c_lo": np.array([-3.1, -5.7, -7.4, -7.9]),
    "c_hi": np.array([3.3, 5.8, 7.4, 8.1]),
}


def default_bone_length_table():
    return BoneLengthTable(lo=_DEFAULT_BL_LO, hi=_DEFAULT_BL_HI)


def default_palmar_table():
    return PalmarConstraintTable(**_DEFAULT_PALMAR)
