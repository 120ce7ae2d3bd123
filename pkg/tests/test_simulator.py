from dataclasses import replace

import numpy as np
import pytest
import torch

from wifihand import hand_model as hm
from wifihand import losses, simulator as sim
from wifihand.errors import ChannelError, GenerationError, RenderError


class TestSamplePose:
    def test_deterministic_per_seed(self):
        assert np.array_equal(sim.sample_pose(42), sim.sample_pose(42))
        assert not np.array_equal(sim.sample_pose(42), sim.sample_pose(43))

    def test_shape_and_frame(self):
        p = sim.DEFAULT_SAMPLER
        for seed in range(20):
            pose = sim.sample_pose(seed)
            assert pose.shape == (21, 3)
            assert np.all(pose >= p.frame_margin)
            assert np.all(pose <= 1.0 - p.frame_margin)

    def test_poses_satisfy_constraint_tables(self):
        bl = hm.default_bone_length_table()
        pt = hm.default_palmar_table()
        rng = np.random.default_rng(77)
        for _ in range(50):
            pose = sim.sample_pose(rng)
            bones = hm.bones_from_joints(pose)
            lengths = np.linalg.norm(bones[5:], axis=1)
            assert np.all(hm.range_penalty(lengths, bl.lo, bl.hi) == 0.0)
            phi = hm.cmc_angles(bones)
            c = hm.cmc_curvatures(bones)
            assert np.all(hm.range_penalty(phi, pt.phi_lo, pt.phi_hi) == 0.0)
            assert np.all(hm.range_penalty(c, pt.c_lo, pt.c_hi) == 0.0)

    def test_poses_give_zero_constraint_losses(self):
        rng = np.random.default_rng(78)
        for _ in range(10):
            pose = torch.as_tensor(sim.sample_pose(rng))
            assert losses.bone_length_loss(pose).item() == 0.0
            assert losses.palmar_loss(pose).item() == 0.0

    def test_gesture_templates(self):
        f0 = sim.gesture_flexions(0)
        assert f0.shape == (5, 3)
        # class 0 is the open hand: minimal flexion everywhere
        assert np.all(f0 == f0[0])
        assert np.array_equal(sim.gesture_flexions(5), sim.gesture_flexions(5))
        assert not np.array_equal(sim.gesture_flexions(5),
                                  sim.gesture_flexions(6))
        with pytest.raises(ValueError):
            sim.gesture_flexions(sim.N_GESTURES)

    def test_gesture_poses_cluster_by_class(self):
        # two draws of the same class are closer than draws across classes
        a1 = sim.sample_pose(1, gesture_id=3)
        a2 = sim.sample_pose(2, gesture_id=3)
        b = sim.sample_pose(3, gesture_id=12)
        same = np.linalg.norm(a1 - a2)
        cross = np.linalg.norm(a1 - b)
        assert same < cross

    def test_rejection_budget_error(self):
        # an unsatisfiable frame -> GenerationError
        params = replace(sim.DEFAULT_SAMPLER, frame_margin=0.49, max_rejects=5)
        with pytest.raises(GenerationError):
            sim.sample_pose(0, params=params)

    def test_canonical_open_pose(self):
        pose = sim.canonical_open_pose()
        assert pose.shape == (21, 3)
        assert np.all((pose >= 0.0) & (pose <= 1.0))
        # planar open hand: all curvatures vanish
        bones = hm.bones_from_joints(pose)
        assert np.allclose(hm.cmc_curvatures(bones), 0.0, atol=1e-12)


class TestDerivedTables:
    def test_bone_table_matches_frozen_default(self):
        bl, _ = sim.derive_constraint_tables(n=1000, seed=1)
        default = hm.default_bone_length_table()
        assert np.allclose(bl.lo, default.lo, atol=5e-5)
        assert np.allclose(bl.hi, default.hi, atol=5e-5)

    def test_angle_bounds_match_frozen_default(self):
        _, pt = sim.derive_constraint_tables(n=1000, seed=1)
        default = hm.default_palmar_table()
        assert np.allclose(pt.phi_lo, default.phi_lo, atol=1e-12)
        assert np.allclose(pt.phi_hi, default.phi_hi, atol=1e-12)

    def test_curvature_bounds_nest_inside_frozen_default(self):
        # a small re-derivation must fall within the frozen (widened) bounds
        _, pt = sim.derive_constraint_tables(n=5000, seed=2)
        default = hm.default_palmar_table()
        assert np.all(pt.c_lo >= default.c_lo)
        assert np.all(pt.c_hi <= default.c_hi)


def brute_mask(pose, side):
    """Per-pixel loop oracle for the capsule rasterizer."""
    topo = hm.default_topology()
    segs = []
    for idx, (p, c) in enumerate(topo.bone_order):
        if idx < 5:
            r = 0.050
        else:
            r = (0.032, 0.027, 0.023)[(idx - 5) % 3]
        segs.append((pose[p, :2], pose[c, :2], r))
    cmcs = [g[0] for g in topo.finger_groups]
    for a, b in zip(cmcs[:-1], cmcs[1:]):
        segs.append((pose[a, :2], pose[b, :2], 0.050))
    out = np.zeros((side, side), dtype=np.uint8)
    for row in range(side):
        for col in range(side):
            pt = np.array([(col + 0.5) / side, (row + 0.5) / side])
            for a, b, r in segs:
                ab = b - a
                denom = float(ab @ ab)
                if denom < 1e-18:
                    d = np.linalg.norm(pt - a)
                else:
                    t = np.clip((pt - a) @ ab / denom, 0.0, 1.0)
                    d = np.linalg.norm(pt - (a + t * ab))
                if d <= r:
                    out[row, col] = 1
                    break
    return out


class TestRenderMask:
    def test_binary_output(self):
        mask = sim.render_mask(sim.sample_pose(0))
        assert mask.shape == (114, 114)
        assert mask.dtype == np.uint8
        assert set(np.unique(mask)) <= {0, 1}

    def test_occupancy_reasonable(self):
        for seed in range(5):
            occ = sim.render_mask(sim.sample_pose(seed)).mean()
            assert 0.02 < occ < 0.6

    def test_matches_brute_force_oracle(self):
        pose = sim.sample_pose(3)
        side = 24
        assert np.array_equal(sim.render_mask(pose, side=side),
                              brute_mask(pose, side))

    def test_out_of_frame_rejected(self):
        pose = sim.sample_pose(0).copy()
        pose[5, 0] = 1.2
        with pytest.raises(RenderError):
            sim.render_mask(pose)

    def test_translation_moves_mask(self):
        pose = sim.sample_pose(1)
        shifted = pose + np.array([8.0 / 114.0, 0.0, 0.0])
        if np.all(shifted[:, :2] <= 1.0):
            m1 = sim.render_mask(pose)
            m2 = sim.render_mask(shifted)
            # an 8-pixel x shift moves columns; rows are untouched
            assert np.array_equal(m2[:, 8:], sim.render_mask(pose)[:, :-8])
            assert m1.sum() > 0 and m2.sum() > 0


class TestChannel:
    def test_config_validation(self):
        with pytest.raises(ValueError):
            sim.ChannelConfig(noise_sigma=-0.1)
        with pytest.raises(ValueError):
            sim.ChannelConfig(palm_area=0.05, finger_area=0.06)

    def test_subcarrier_frequencies(self):
        ch = sim.ChannelConfig()
        freqs = ch.subcarrier_freqs()
        assert len(freqs) == 114
        assert abs(freqs[0] - (5.32e9 - 20e6)) < 1e-3
        step = 40e6 / 114
        assert np.allclose(np.diff(freqs), step, atol=1e-6)

    def test_static_paths_fixed_per_domain(self):
        ch = sim.ChannelConfig()
        d0 = sim.DomainSpec(domain_id=0, static_seed=5)
        d1 = sim.DomainSpec(domain_id=1, static_seed=6)
        a = sim.static_paths(ch, d0)
        b = sim.static_paths(ch, d0)
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
        c = sim.static_paths(ch, d1)
        assert not np.array_equal(a[0], c[0])

    def test_hand_reflectors_geometry(self):
        ch = sim.ChannelConfig()
        dom = sim.DomainSpec(domain_id=0, offset_m=(0.1, 0.0, 0.0))
        pose = sim.sample_pose(4)
        points, areas = sim.hand_reflectors(pose, ch, dom)
        assert points.shape == (16, 3) and areas.shape == (16,)
        assert areas[0] == ch.palm_area
        assert np.all(areas[1:] == ch.finger_area)
        expected_root = ((pose[0] - 0.5) * sim.UNIT_METERS
                         + np.array(ch.hand_center) + np.array(dom.offset_m))
        assert np.allclose(points[0], expected_root, atol=1e-12)

    def test_csi_matches_ray_sum_oracle(self):
        # no noise/motion/static paths: the response is exactly the
        # direct ray plus area/d^2-weighted reflector rays
        ch = replace(sim.ChannelConfig(), n_subcarriers=6, n_packets=2,
                     n_static_paths=0, noise_sigma=0.0, motion_amp_m=0.0)
        dom = sim.DomainSpec(domain_id=0)
        pose = sim.sample_pose(5)
        csi = sim.synth_csi(pose, ch, dom, rng=0)
        assert csi.shape == (6, 2, 3)
        points, areas = sim.hand_reflectors(pose, ch, dom)
        freqs = ch.subcarrier_freqs()
        tx = np.array(ch.tx_pos)
        for a, rx in enumerate(np.array(ch.rx_pos)):
            for k, f in enumerate(freqs):
                d_direct = np.linalg.norm(rx - tx)
                val = ch.direct_gain * np.exp(
                    -2j * np.pi * d_direct * f / sim.SPEED_OF_LIGHT)
                for p_ref, area in zip(points, areas):
                    d = (np.linalg.norm(p_ref - tx)
                         + np.linalg.norm(p_ref - rx))
                    val += (area / d**2) * np.exp(
                        -2j * np.pi * d * f / sim.SPEED_OF_LIGHT)
                assert abs(csi[k, 0, a] - val) < 1e-12
        # motionless and noiseless packets are identical
        assert np.array_equal(csi[:, 0, :], csi[:, 1, :])

    def test_motion_varies_packets(self):
        ch = replace(sim.ChannelConfig(), n_subcarriers=8, n_packets=4,
                     noise_sigma=0.0)
        csi = sim.synth_csi(sim.sample_pose(6), ch, sim.DomainSpec(0), rng=1)
        assert not np.array_equal(csi[:, 0, :], csi[:, 1, :])

    def test_determinism(self):
        ch = replace(sim.ChannelConfig(), n_subcarriers=8, n_packets=2)
        pose = sim.sample_pose(7)
        a = sim.synth_csi(pose, ch, sim.DomainSpec(0), rng=3)
        b = sim.synth_csi(pose, ch, sim.DomainSpec(0), rng=3)
        assert np.array_equal(a, b)

    def test_domain_offset_changes_csi(self):
        ch = replace(sim.ChannelConfig(), n_subcarriers=8, n_packets=2,
                     noise_sigma=0.0)
        pose = sim.sample_pose(8)
        d0 = sim.DomainSpec(domain_id=0, static_seed=1)
        d1 = sim.DomainSpec(domain_id=1, offset_m=(0.2, 0.0, 0.0), static_seed=1)
        a = sim.synth_csi(pose, ch, d0, rng=0)
        b = sim.synth_csi(pose, ch, d1, rng=0)
        assert not np.allclose(a, b)

    def test_reflector_on_antenna_rejected(self):
        ch = replace(sim.ChannelConfig(), hand_center=(0.5, 0.0, 0.0),
                     n_subcarriers=4, n_packets=1)
        pose = np.full((21, 3), 0.5)
        with pytest.raises(ChannelError):
            sim.synth_csi(pose, ch, sim.DomainSpec(0), rng=0)


class TestGenerateSamples:
    def test_balanced_assignment(self):
        domains = sim.default_domains(3)
        ch = replace(sim.ChannelConfig(), n_subcarriers=4, n_packets=2)
        samples = sim.generate_samples(9, domains, seed=0, channel=ch,
                                       gesture_set=[0, 1])
        assert [s.domain_id for s in samples] == [0, 1, 2] * 3
        assert [s.gesture_id for s in samples] == [0, 0, 0, 1, 1, 1, 0, 0, 0]

    def test_reproducible_and_order_independent(self):
        domains = sim.default_domains(2)
        ch = replace(sim.ChannelConfig(), n_subcarriers=4, n_packets=2)
        a = sim.generate_samples(4, domains, seed=9, channel=ch)
        b = sim.generate_samples(4, domains, seed=9, channel=ch)
        short = sim.generate_samples(2, domains, seed=9, channel=ch)
        for i in range(4):
            assert np.array_equal(a[i].csi, b[i].csi)
            assert np.array_equal(a[i].pose, b[i].pose)
        for i in range(2):
            assert np.array_equal(a[i].csi, short[i].csi)

    def test_labels_consistent(self):
        domains = sim.default_domains(1)
        ch = replace(sim.ChannelConfig(), n_subcarriers=4, n_packets=2)
        s = sim.generate_samples(1, domains, seed=3, channel=ch)[0]
        assert np.array_equal(s.mask, sim.render_mask(s.pose))
        assert s.gesture_id == -1

    def test_rejects_nonpositive_n(self):
        with pytest.raises(ValueError):
            sim.generate_samples(0, sim.default_domains(1), seed=0)


def test_default_domains_spacing():
    domains = sim.default_domains(5, spacing_m=0.15)
    xs = [d.offset_m[0] for d in domains]
    assert np.allclose(np.diff(xs), 0.15)
    assert abs(sum(xs)) < 1e-12  # centered
    assert len({d.static_seed for d in domains}) == 5
