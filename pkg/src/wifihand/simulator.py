"""Synthetic ground-truth oracle: valid hand poses, rendered masks and
multipath CSI from a point-reflector channel model.

The channel is a deliberately simple ray sum (static environment paths
plus one path per hand reflector) whose purpose is a learnable,
physically flavored CSI-to-pose mapping with controllable domain shift,
not electromagnetic fidelity.
"""

import io
from dataclasses import dataclass, field, replace

import numpy as np

from . import hand_model as hm
from .errors import ChannelError, GenerationError, RenderError

SPEED_OF_LIGHT = 299792458.0

# Normalized pose units: 20 cm per unit, so a PCK threshold of 2 cm is
# 0.1 in pose coordinates.
CM_PER_UNIT = 20.0
UNIT_METERS = CM_PER_UNIT / 100.0

N_GESTURES = 27


@dataclass(frozen=True)
class SamplerParams:
    """Parameter ranges of the forward-kinematic pose sampler."""

    # in-plane CMC fan angles (radians from +y), thumb..pinky
    cmc_base_angle: tuple = (-0.90, -0.35, 0.0, 0.33, 0.68)
    cmc_angle_jitter: float = 0.04
    cmc_tilt: float = 0.06
    # per-finger CMC length ranges
    cmc_len: tuple = (
        (0.09, 0.12),
        (0.15, 0.18),
        (0.16, 0.19),
        (0.15, 0.18),
        (0.12, 0.15),
    )
    # per-finger (MCP, PIP, DIP) bone length ranges
    mcp_len: tuple = (
        (0.10, 0.13),
        (0.11, 0.14),
        (0.11, 0.14),
        (0.11, 0.14),
        (0.10, 0.13),
    )
    pip_len: tuple = ((0.07, 0.09),) * 5
    dip_len: tuple = ((0.05, 0.07),) * 5
    # flexion ranges per segment (MCP, PIP, DIP), radians toward the palm
    flex_lo: tuple = (0.0, 0.0, 0.0)
    flex_hi: tuple = (1.1, 1.3, 0.8)
    flex_jitter: float = 0.05
    root_center: tuple = (0.5, 0.42, 0.5)
    root_jitter: float = 0.06
    global_rot: float = 0.25
    frame_margin: float = 0.02
    max_rejects: int = 200

    def finger_bone_ranges(self):
        """(lo, hi) arrays over the 15 finger bones, finger-major."""
        lo, hi = [], []
        for q in range(hm.N_FINGERS):
            for rng_ in (self.mcp_len[q], self.pip_len[q], self.dip_len[q]):
                lo.append(rng_[0])
                hi.append(rng_[1])
        return np.array(lo), np.array(hi)


DEFAULT_SAMPLER = SamplerParams()


def _rotation(axis, angle):
    axis = axis / np.linalg.norm(axis)
    k = np.array(
        [
            [0.0, -axis[2], axis[1]],
            [axis[2], 0.0, -axis[0]],
            [-axis[1], axis[0], 0.0],
        ]
    )
    return np.eye(3) + np.sin(angle) * k + (1.0 - np.cos(angle)) * (k @ k)


def _cmc_direction(theta, tilt):
    return np.array(
        [np.sin(theta) * np.cos(tilt), np.cos(theta) * np.cos(tilt), np.sin(tilt)]
    )


def gesture_flexions(gesture_id, params=DEFAULT_SAMPLER):
    """Fixed per-class flexion template (27 synthetic posture classes)."""
    if not 0 <= gesture_id < N_GESTURES:
        raise ValueError(f"gesture id must be in [0, {N_GESTURES}), got {gesture_id}")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=[90210, gesture_id]))
    lo = np.asarray(params.flex_lo) + params.flex_jitter
    hi = np.asarray(params.flex_hi) - params.flex_jitter
    if gesture_id == 0:
        # class 0: the fully open hand
        return np.tile(lo, (hm.N_FINGERS, 1))
    return lo + rng.random((hm.N_FINGERS, 3)) * (hi - lo)


def _build_pose(rng, params, flex, jitter_flex=True):
    """Forward-kinematic construction; returns a (21, 3) joint array."""
    p = params
    bones = np.zeros((hm.N_BONES, 3))
    palm_normal = np.array([0.0, 0.0, 1.0])
    flo, fhi = np.asarray(p.flex_lo), np.asarray(p.flex_hi)
    for q in range(hm.N_FINGERS):
        theta = p.cmc_base_angle[q] + rng.uniform(-p.cmc_angle_jitter, p.cmc_angle_jitter)
        tilt = rng.uniform(-p.cmc_tilt, p.cmc_tilt)
        direction = _cmc_direction(theta, tilt)
        bones[q] = rng.uniform(*p.cmc_len[q]) * direction
        lateral = np.cross(palm_normal, direction)
        lateral /= np.linalg.norm(lateral)
        lengths = [
            rng.uniform(*p.mcp_len[q]),
            rng.uniform(*p.pip_len[q]),
            rng.uniform(*p.dip_len[q]),
        ]
        cum = 0.0
        for k in range(3):
            f = flex[q, k]
            if jitter_flex:
                f += rng.uniform(-p.flex_jitter, p.flex_jitter)
            cum += float(np.clip(f, flo[k], fhi[k]))
            seg_dir = _rotation(lateral, -cum) @ direction
            bones[hm.N_FINGERS + 3 * q + k] = lengths[k] * seg_dir
    root = np.asarray(p.root_center) + rng.uniform(-p.root_jitter, p.root_jitter, 3)
    joints = hm.joints_from_bones(root, bones)
    rot_angles = rng.uniform(-p.global_rot, p.global_rot, 3)
    rot = (
        _rotation(np.array([0.0, 0.0, 1.0]), rot_angles[2])
        @ _rotation(np.array([0.0, 1.0, 0.0]), rot_angles[1])
        @ _rotation(np.array([1.0, 0.0, 0.0]), rot_angles[0])
    )
    return root + (joints - root) @ rot.T


def sample_pose(rng, topo=None, bone_table=None, palmar_table=None,
                gesture_id=None, params=DEFAULT_SAMPLER):
    """Draw a kinematically valid pose; deterministic per seed.

    Accepts an integer seed or a numpy Generator.  Generated poses
    satisfy the default constraint tables by construction; a rejection
    loop guards the frame bounds (and tables, when given).
    """
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    topo = topo or hm.default_topology()
    lo = params.frame_margin
    hi = 1.0 - params.frame_margin
    for _ in range(params.max_rejects):
        if gesture_id is None:
            flex = np.column_stack(
                [
                    rng.uniform(params.flex_lo[k], params.flex_hi[k], hm.N_FINGERS)
                    for k in range(3)
                ]
            )
            joints = _build_pose(rng, params, flex, jitter_flex=False)
        else:
            flex = gesture_flexions(gesture_id, params)
            joints = _build_pose(rng, params, flex, jitter_flex=True)
        if np.any(joints < lo) or np.any(joints > hi):
            continue
        if bone_table is not None or palmar_table is not None:
            bones = hm.bones_from_joints(joints, topo)
            if bone_table is not None:
                lengths = np.linalg.norm(bones[hm.N_FINGERS:], axis=1)
                if np.any(hm.range_penalty(lengths, bone_table.lo, bone_table.hi) > 0):
                    continue
            if palmar_table is not None:
                phi = hm.cmc_angles(bones)
                c = hm.cmc_curvatures(bones)
                if np.any(hm.range_penalty(phi, palmar_table.phi_lo, palmar_table.phi_hi) > 0):
                    continue
                if np.any(hm.range_penalty(c, palmar_table.c_lo, palmar_table.c_hi) > 0):
                    continue
        return joints
    raise GenerationError("pose rejection budget exhausted")


def canonical_open_pose(params=DEFAULT_SAMPLER):
    """Deterministic open hand at mid-range parameters, no jitter."""
    p = params
    bones = np.zeros((hm.N_BONES, 3))
    for q in range(hm.N_FINGERS):
        direction = _cmc_direction(p.cmc_base_angle[q], 0.0)
        bones[q] = np.mean(p.cmc_len[q]) * direction
        for k, seg in enumerate((p.mcp_len[q], p.pip_len[q], p.dip_len[q])):
            bones[hm.N_FINGERS + 3 * q + k] = np.mean(seg) * direction
    return hm.joints_from_bones(np.asarray(p.root_center), bones)


def derive_constraint_tables(n=200_000, seed=20240811, widen=0.10,
                             params=DEFAULT_SAMPLER):
    """Derive the default constraint tables from the sampler's ranges.

    Finger-bone lengths and CMC angles admit exact bounds from the
    sampler parameters (lengths are drawn uniformly inside their range;
    an angle between two tilted fan directions differs from the in-plane
    gap by at most the two tilts).  Curvature bounds are estimated by
    Monte Carlo over palm fans and widened by ``widen``.
    """
    p = params
    lo, hi = p.finger_bone_ranges()
    bone_table = hm.BoneLengthTable(lo=lo * 0.99, hi=hi * 1.01)

    base = np.asarray(p.cmc_base_angle)
    gaps = np.diff(base)
    slack = 2.0 * p.cmc_angle_jitter + 2.0 * p.cmc_tilt
    phi_lo = np.maximum(gaps - slack, 0.0)
    phi_hi = np.minimum(gaps + slack, np.pi)

    rng = np.random.default_rng(seed)
    theta = base + rng.uniform(-p.cmc_angle_jitter, p.cmc_angle_jitter, (n, 5))
    tilt = rng.uniform(-p.cmc_tilt, p.cmc_tilt, (n, 5))
    lens = np.stack(
        [rng.uniform(p.cmc_len[q][0], p.cmc_len[q][1], n) for q in range(5)], axis=1
    )
    dirs = np.stack(
        [
            np.sin(theta) * np.cos(tilt),
            np.cos(theta) * np.cos(tilt),
            np.sin(tilt),
        ],
        axis=-1,
    )
    cmc = lens[..., None] * dirs
    diff = cmc[:, 1:] - cmc[:, :-1]
    diff_sq = np.sum(diff * diff, axis=-1)
    cr = np.cross(cmc[:, 1:], cmc[:, :-1])
    nrm = cr / np.linalg.norm(cr, axis=-1, keepdims=True)
    e = np.empty((n, 5, 3))
    e[:, 0] = nrm[:, 0]
    mid = nrm[:, 1:] + nrm[:, :-1]
    e[:, 1:4] = mid / np.linalg.norm(mid, axis=-1, keepdims=True)
    e[:, 4] = nrm[:, 3]
    c = np.sum((e[:, 1:] - e[:, :-1]) * diff, axis=-1) / diff_sq
    c_min, c_max = c.min(axis=0), c.max(axis=0)
    pad = widen * (c_max - c_min)
    palmar = hm.PalmarConstraintTable(
        phi_lo=phi_lo, phi_hi=phi_hi, c_lo=c_min - pad, c_hi=c_max + pad
    )
    return bone_table, palmar


# ---------------------------------------------------------------------------
# mask rendering

MASK_SIDE = 114

# capsule radii in normalized units, by bone kind
_RADIUS_PALM = 0.050
_RADIUS_MCP = 0.032
_RADIUS_PIP = 0.027
_RADIUS_DIP = 0.023


def _segment_distances(points, a, b):
    """Distance from each point (n, 2) to segment a-b (2,)."""
    ab = b - a
    denom = float(ab @ ab)
    if denom < 1e-18:
        return np.linalg.norm(points - a, axis=1)
    t = np.clip((points - a) @ ab / denom, 0.0, 1.0)
    proj = a + t[:, None] * ab
    return np.linalg.norm(points - proj, axis=1)


def render_mask(pose, topo=None, side=MASK_SIDE):
    """Orthographic capsule rasterization of the pose onto the x-y plane.

    Pixel (r, c) covers x in [c/side, (c+1)/side) and y likewise for r.
    """
    topo = topo or hm.default_topology()
    joints = hm.validate_pose(pose)
    if np.any(joints[:, :2] < 0.0) or np.any(joints[:, :2] > 1.0):
        raise RenderError("pose projects outside the unit frame")
    grid = (np.arange(side) + 0.5) / side
    xs, ys = np.meshgrid(grid, grid)
    pts = np.column_stack([xs.ravel(), ys.ravel()])
    inside = np.zeros(side * side, dtype=bool)

    segments = []
    for idx, (p, c) in enumerate(topo.bone_order):
        if idx < hm.N_FINGERS:
            r = _RADIUS_PALM
        else:
            r = (_RADIUS_MCP, _RADIUS_PIP, _RADIUS_DIP)[(idx - hm.N_FINGERS) % 3]
        segments.append((joints[p, :2], joints[c, :2], r))
    # webbing between adjacent CMC joints closes the palm region
    cmcs = [g[0] for g in topo.finger_groups]
    for a, b in zip(cmcs[:-1], cmcs[1:]):
        segments.append((joints[a, :2], joints[b, :2], _RADIUS_PALM))

    for a, b, r in segments:
        inside |= _segment_distances(pts, a, b) <= r
    return inside.reshape(side, side).astype(np.uint8)


# ---------------------------------------------------------------------------
# CSI synthesis


@dataclass(frozen=True)
class ChannelConfig:
    """Geometry and gains of the synthetic point-reflector channel."""

    carrier_hz: float = 5.32e9
    bandwidth_hz: float = 40e6
    n_subcarriers: int = 114
    n_packets: int = 20
    tx_pos: tuple = (-0.5, 0.0, 0.0)
    rx_pos: tuple = (
        (0.5, 0.0, 0.0),
        (0.5, 0.025, 0.0),
        (0.5, 0.05, 0.0),
    )
    hand_center: tuple = (0.0, 0.30, 0.10)
    n_static_paths: int = 5
    direct_gain: float = 0.5
    direct_dist_extra: float = 0.0
    static_gain_range: tuple = (0.05, 0.2)
    static_dist_range: tuple = (1.5, 8.0)
    noise_sigma: float = 0.01
    palm_area: float = 0.5
    finger_area: float = 0.06
    motion_amp_m: float = 0.004

    def __post_init__(self):
        if self.carrier_hz <= 0 or self.bandwidth_hz <= 0:
            raise ValueError("frequencies must be positive")
        if self.noise_sigma < 0:
            raise ValueError("noise sigma must be >= 0")
        if self.palm_area <= self.finger_area:
            raise ValueError("palm reflector must dominate finger reflectors")

    def subcarrier_freqs(self):
        k = np.arange(self.n_subcarriers)
        return (
            self.carrier_hz
            - self.bandwidth_hz / 2.0
            + self.bandwidth_hz * k / self.n_subcarriers
        )


@dataclass(frozen=True)
class DomainSpec:
    """One (hand position, environment) configuration."""

    domain_id: int
    offset_m: tuple = (0.0, 0.0, 0.0)
    static_seed: int = 0

    def as_tuple(self):
        return (self.domain_id, *self.offset_m, self.static_seed)


def default_domains(n=5, spacing_m=0.15):
    """Evenly offset hand regions with distinct environment seeds."""
    return [
        DomainSpec(domain_id=k, offset_m=(spacing_m * (k - (n - 1) / 2), 0.0, 0.0),
                   static_seed=1000 + k)
        for k in range(n)
    ]


def static_paths(channel, domain):
    """Environment paths (distances, complex gains), fixed per domain."""
    rng = np.random.default_rng(
        np.random.SeedSequence(entropy=[7177, domain.static_seed])
    )
    d = rng.uniform(*channel.static_dist_range, channel.n_static_paths)
    mag = rng.uniform(*channel.static_gain_range, channel.n_static_paths)
    phase = rng.uniform(0.0, 2.0 * np.pi, channel.n_static_paths)
    return d, mag * np.exp(1j * phase)


def hand_reflectors(pose, channel, domain, topo=None):
    """Reflector positions (meters) and areas: palm + 15 finger segments."""
    topo = topo or hm.default_topology()
    joints = hm.validate_pose(pose)
    pos_m = (joints - 0.5) * UNIT_METERS + np.asarray(channel.hand_center) + np.asarray(
        domain.offset_m
    )
    order = np.asarray(topo.bone_order)[hm.N_FINGERS:]
    midpoints = 0.5 * (pos_m[order[:, 0]] + pos_m[order[:, 1]])
    points = np.vstack([pos_m[hm.ROOT], midpoints])
    areas = np.concatenate([[channel.palm_area], np.full(hm.N_FINGER_BONES, channel.finger_area)])
    return points, areas


def _path_response(freqs, dist, gain):
    """Ray contribution per subcarrier: gain * exp(-j 2 pi d f / c)."""
    return gain * np.exp(-2j * np.pi * dist[..., None] * freqs / SPEED_OF_LIGHT)


def synth_csi(pose, channel, domain, rng, topo=None):
    """Simulate an F x T x Ant complex CSI window for one labeled pose.

    Packets share the pose but carry a small vertical oscillation of the
    whole hand (plus noise), mimicking sequence capture.
    """
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    freqs = channel.subcarrier_freqs()
    F, T = channel.n_subcarriers, channel.n_packets
    tx = np.asarray(channel.tx_pos)
    rxs = np.asarray(channel.rx_pos)
    ant = len(rxs)

    d_static, g_static = static_paths(channel, domain)
    csi = np.zeros((F, T, ant), dtype=np.complex128)

    points, areas = hand_reflectors(pose, channel, domain, topo)
    d_tx_min = np.linalg.norm(points - tx, axis=1).min(initial=np.inf)
    d_rx_min = min(
        np.linalg.norm(points - rx, axis=1).min(initial=np.inf) for rx in rxs
    )
    if min(d_tx_min, d_rx_min) < 1e-3:
        raise ChannelError("hand reflector coincides with an antenna")

    phase0 = rng.uniform(0.0, 2.0 * np.pi)
    for t in range(T):
        dz = channel.motion_amp_m * np.sin(2.0 * np.pi * t / T + phase0)
        pts_t = points + np.array([0.0, 0.0, dz])
        d_tx = np.linalg.norm(pts_t - tx, axis=1)
        for a, rx in enumerate(rxs):
            d_direct = np.linalg.norm(rx - tx) + channel.direct_dist_extra
            resp = _path_response(freqs, np.array([d_direct]), channel.direct_gain)[0]
            resp = resp + _path_response(freqs, d_static, g_static[:, None]).sum(axis=0)
            d_hand = d_tx + np.linalg.norm(pts_t - rx, axis=1)
            g_hand = areas / d_hand**2
            resp = resp + _path_response(freqs, d_hand, g_hand[:, None]).sum(axis=0)
            csi[:, t, a] = resp
    if channel.noise_sigma > 0:
        noise = rng.normal(0.0, channel.noise_sigma, (F, T, ant, 2))
        csi = csi + noise[..., 0] + 1j * noise[..., 1]
    return csi


# ---------------------------------------------------------------------------
# dataset generation


@dataclass
class LabeledSample:
    """One simulator sample: CSI window plus its mask/pose labels."""

    csi: np.ndarray
    mask: np.ndarray
    pose: np.ndarray
    domain_id: int
    gesture_id: int = -1


def generate_samples(n, domains, seed, channel=None, gesture_set=None,
                     topo=None, params=DEFAULT_SAMPLER):
    """Generate n LabeledSamples balanced across domains and gestures.

    Sample i is drawn from domain i % D and (when a gesture set is
    given) gesture class (i // D) % G, with an RNG stream derived from
    (seed, i) so generation is order-independent and reproducible.
    """
    if n <= 0:
        raise ValueError("need n > 0")
    channel = channel or ChannelConfig()
    topo = topo or hm.default_topology()
    domain_list = list(domains)
    out = []
    for i in range(n):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=[seed, i]))
        domain = domain_list[i % len(domain_list)]
        gid = -1
        if gesture_set:
            gid = gesture_set[(i // len(domain_list)) % len(gesture_set)]
        pose = sample_pose(rng, topo, gesture_id=None if gid < 0 else gid,
                           params=params)
        mask = render_mask(pose, topo)
        csi = synth_csi(pose, channel, domain, rng, topo)
        out.append(LabeledSample(csi=csi, mask=mask, pose=pose,
                                 domain_id=domain.domain_id, gesture_id=gid))
    return out
