import numpy as np
import pytest

from wifihand import hand_model as hm
from wifihand.errors import DegenerateGeometryError, ShapeError, TopologyError


def random_pose(rng, spread=0.3):
    return 0.5 + rng.uniform(-spread, spread, (hm.N_JOINTS, 3))


def fan_bones(angles, tilts, lengths):
    """Bone array whose first 5 rows form a CMC fan."""
    angles = np.asarray(angles)
    tilts = np.asarray(tilts)
    dirs = np.stack(
        [np.sin(angles) * np.cos(tilts), np.cos(angles) * np.cos(tilts),
         np.sin(tilts)],
        axis=1,
    )
    bones = np.zeros((hm.N_BONES, 3))
    bones[:5] = np.asarray(lengths)[:, None] * dirs
    return bones


class TestTopology:
    def test_default_shape(self):
        topo = hm.default_topology()
        assert len(topo.parent) == 21
        assert topo.parent[hm.ROOT] == -1
        assert len(topo.bone_order) == 20
        # CMC bones first, all parented to the root
        for q in range(5):
            assert topo.bone_order[q][0] == hm.ROOT

    def test_finger_groups_are_chains(self):
        topo = hm.default_topology()
        for group in topo.finger_groups:
            cmc, mcp, pip_, dip = group
            assert topo.parent[cmc] == hm.ROOT
            assert topo.parent[mcp] == cmc
            assert topo.parent[pip_] == mcp
            assert topo.parent[dip] == pip_

    def test_rejects_cycle(self):
        topo = hm.default_topology()
        parent = list(topo.parent)
        parent[1] = 2
        parent[2] = 1
        with pytest.raises(TopologyError):
            hm.SkeletonTopology(tuple(parent), topo.finger_groups,
                                topo.bone_order)

    def test_rejects_inconsistent_bone_order(self):
        topo = hm.default_topology()
        bad = list(topo.bone_order)
        bad[0] = (2, 1)
        with pytest.raises(TopologyError):
            hm.SkeletonTopology(topo.parent, topo.finger_groups, tuple(bad))

    def test_dict_round_trip(self):
        topo = hm.default_topology()
        assert hm.SkeletonTopology.from_dict(topo.as_dict()) == topo


class TestBones:
    def test_all_origin_gives_zero_bones(self):
        bones = hm.bones_from_joints(np.zeros((21, 3)))
        assert np.all(bones == 0.0)

    def test_single_offset(self):
        pose = np.zeros((21, 3))
        pose[1] = (0.1, 0.0, 0.0)  # thumb CMC joint
        bones = hm.bones_from_joints(pose)
        assert np.allclose(bones[0], (0.1, 0.0, 0.0))
        # the thumb MCP bone starts at the displaced CMC
        assert np.allclose(bones[5], (-0.1, 0.0, 0.0))

    def test_round_trip_random(self):
        rng = np.random.default_rng(11)
        topo = hm.default_topology()
        for _ in range(20):
            pose = random_pose(rng)
            bones = hm.bones_from_joints(pose, topo)
            back = hm.joints_from_bones(pose[hm.ROOT], bones, topo)
            assert np.max(np.abs(back - pose)) < 1e-12

    def test_bad_shape(self):
        with pytest.raises(ShapeError):
            hm.bones_from_joints(np.zeros((20, 3)))
        with pytest.raises(ShapeError):
            hm.joints_from_bones(np.zeros(3), np.zeros((19, 3)))


class TestRangePenalty:
    def test_examples(self):
        assert hm.range_penalty(5.0, 1.0, 10.0) == 0.0
        assert hm.range_penalty(0.0, 1.0, 10.0) == 1.0
        assert hm.range_penalty(12.0, 1.0, 10.0) == 2.0

    def test_zero_iff_inside(self):
        xs = np.linspace(-5, 15, 201)
        pen = hm.range_penalty(xs, 1.0, 10.0)
        inside = (xs >= 1.0) & (xs <= 10.0)
        assert np.all(pen[inside] == 0.0)
        assert np.all(pen[~inside] > 0.0)

    def test_invalid_range(self):
        with pytest.raises(ValueError):
            hm.range_penalty(0.0, 2.0, 1.0)

    def test_subgradient_finite_difference(self):
        # away from the kinks the function is linear with slope -1/0/+1
        step = 1e-4
        for x, expected in ((-3.0, -1.0), (5.0, 0.0), (14.0, 1.0)):
            num = (hm.range_penalty(x + step, 1.0, 10.0)
                   - hm.range_penalty(x - step, 1.0, 10.0)) / (2 * step)
            assert abs(num - expected) <= 1e-6

    def test_convexity(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            x1, x2 = rng.uniform(-20, 20, 2)
            lam = rng.uniform()
            mid = hm.range_penalty(lam * x1 + (1 - lam) * x2, 1.0, 10.0)
            chord = (lam * hm.range_penalty(x1, 1.0, 10.0)
                     + (1 - lam) * hm.range_penalty(x2, 1.0, 10.0))
            assert mid <= chord + 1e-12


class TestCmcAngles:
    def test_parallel_is_zero(self):
        bones = np.zeros((20, 3))
        bones[:5] = np.array([0.0, 1.0, 0.0]) * np.arange(1, 6)[:, None]
        assert np.allclose(hm.cmc_angles(bones), 0.0)

    def test_orthogonal(self):
        bones = fan_bones([0.0, np.pi / 2, 0.0, np.pi / 2, 0.0],
                          np.zeros(5), np.ones(5))
        phi = hm.cmc_angles(bones)
        assert abs(phi[0] - np.pi / 2) < 1e-12

    def test_forty_five_degrees(self):
        bones = np.zeros((20, 3))
        bones[0] = (1.0, 0.0, 0.0)
        bones[1] = (1.0, 1.0, 0.0)
        bones[2:5] = [(0.0, 1.0, 0.0)] * 3
        phi = hm.cmc_angles(bones)
        assert abs(phi[0] - np.pi / 4) <= 1e-9

    def test_scale_and_rotation_invariance(self):
        rng = np.random.default_rng(7)
        for _ in range(25):
            bones = fan_bones(np.sort(rng.uniform(-1, 1, 5)),
                              rng.uniform(-0.2, 0.2, 5),
                              rng.uniform(0.1, 0.3, 5))
            phi = hm.cmc_angles(bones)
            assert np.allclose(hm.cmc_angles(3.7 * bones), phi, atol=1e-9)
            rot = _random_rotation(rng)
            assert np.allclose(hm.cmc_angles(bones @ rot.T), phi, atol=1e-9)

    def test_zero_bone_rejected(self):
        bones = np.zeros((20, 3))
        with pytest.raises(DegenerateGeometryError):
            hm.cmc_angles(bones)


def _random_rotation(rng):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def curvature_reference(cmc):
    """Straight-line scalar reimplementation (independent oracle)."""
    n = []
    for i in range(4):
        cr = np.cross(cmc[i + 1], cmc[i])
        n.append(cr / np.linalg.norm(cr))
    e = [None] * 5
    e[0] = n[0]
    for i in range(1, 4):
        s = n[i] + n[i - 1]
        e[i] = s / np.linalg.norm(s)
    e[4] = n[3]
    c = []
    for i in range(4):
        d = cmc[i + 1] - cmc[i]
        c.append(float((e[i + 1] - e[i]) @ d / (d @ d)))
    return np.array(c)


class TestCmcCurvatures:
    def test_planar_fan_is_zero(self):
        bones = fan_bones([-0.8, -0.3, 0.0, 0.3, 0.8], np.zeros(5),
                          [0.1, 0.15, 0.17, 0.15, 0.1])
        assert np.allclose(hm.cmc_curvatures(bones), 0.0, atol=1e-12)

    def test_mirror_negates_curvatures(self):
        # reflecting the fan through the y-z plane flips every normal,
        # so the whole curvature sequence changes sign
        rng = np.random.default_rng(13)
        mirror = np.diag([-1.0, 1.0, 1.0])
        for _ in range(10):
            bones = fan_bones(np.sort(rng.uniform(-1, 1, 5)),
                              rng.uniform(-0.15, 0.15, 5),
                              rng.uniform(0.1, 0.25, 5))
            c = hm.cmc_curvatures(bones)
            mirrored = bones.copy()
            mirrored[:5] = bones[:5] @ mirror.T
            assert np.allclose(hm.cmc_curvatures(mirrored), -c, atol=1e-9)

    def test_mirror_symmetric_fan_has_symmetric_sequence(self):
        # a fan equal to its own mirror (with finger order reversed)
        # has c1 = c4 and c2 = c3; verified against the brute-force
        # reference below
        bones = fan_bones([-0.8, -0.3, 0.0, 0.3, 0.8],
                          [0.05, -0.02, 0.03, -0.02, 0.05],
                          [0.1, 0.15, 0.17, 0.15, 0.1])
        c = hm.cmc_curvatures(bones)
        ref = curvature_reference(bones[:5])
        assert np.allclose(c, ref, atol=1e-9)
        assert abs(c[0] - c[3]) < 1e-9
        assert abs(c[1] - c[2]) < 1e-9

    def test_against_reference_implementation(self):
        rng = np.random.default_rng(29)
        for _ in range(25):
            bones = fan_bones(np.sort(rng.uniform(-1.2, 1.2, 5)),
                              rng.uniform(-0.2, 0.2, 5),
                              rng.uniform(0.08, 0.3, 5))
            assert np.allclose(hm.cmc_curvatures(bones),
                               curvature_reference(bones[:5]), atol=1e-9)

    def test_rotation_invariance(self):
        rng = np.random.default_rng(31)
        for _ in range(10):
            bones = fan_bones(np.sort(rng.uniform(-1, 1, 5)),
                              rng.uniform(-0.15, 0.15, 5),
                              rng.uniform(0.1, 0.25, 5))
            c = hm.cmc_curvatures(bones)
            rot = _random_rotation(rng)
            rotated = bones.copy()
            rotated[:5] = bones[:5] @ rot.T
            assert np.allclose(hm.cmc_curvatures(rotated), c, atol=1e-9)

    def test_degenerate_rejected(self):
        bones = np.zeros((20, 3))
        bones[:5] = np.array([0.0, 1.0, 0.0])  # identical bones
        with pytest.raises(DegenerateGeometryError):
            hm.cmc_curvatures(bones)
        parallel = np.zeros((20, 3))
        parallel[:5] = np.array([0.0, 1.0, 0.0]) * np.arange(1, 6)[:, None]
        with pytest.raises(DegenerateGeometryError):
            hm.cmc_curvatures(parallel)


class TestTables:
    def test_default_tables_valid(self):
        bl = hm.default_bone_length_table()
        assert np.all(bl.lo > 0) and np.all(bl.lo <= bl.hi)
        pt = hm.default_palmar_table()
        assert np.all(pt.phi_lo >= 0) and np.all(pt.phi_hi <= np.pi)

    def test_dict_round_trips(self):
        bl = hm.default_bone_length_table()
        bl2 = hm.BoneLengthTable.from_dict(bl.as_dict())
        assert np.allclose(bl2.lo, bl.lo) and np.allclose(bl2.hi, bl.hi)
        pt = hm.default_palmar_table()
        pt2 = hm.PalmarConstraintTable.from_dict(pt.as_dict())
        assert np.allclose(pt2.c_lo, pt.c_lo)
        assert np.allclose(pt2.phi_hi, pt.phi_hi)

    def test_invalid_tables_rejected(self):
        with pytest.raises(ValueError):
            hm.BoneLengthTable(lo=np.full(15, 0.2), hi=np.full(15, 0.1))
        with pytest.raises(ValueError):
            hm.PalmarConstraintTable(
                phi_lo=np.full(4, -0.1), phi_hi=np.full(4, 0.5),
                c_lo=np.zeros(4), c_hi=np.ones(4),
            )
