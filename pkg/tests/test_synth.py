"""Ground-truth scene generation: geometry, determinism, and loss floors.

The bend test checks articulation against an explicit rigid transform of
the distal joint's world change; the mask test recomputes interior chord
lengths by dense ray sampling, independent of the renderer's own
quadrature.
"""

import numpy as np
import pytest

from boneforge.geometry import sample_surface
from boneforge.occupancy import (
    OccupancyConfig,
    coverage_loss,
    overlap_loss,
    pixel_rays,
)
from boneforge.optimizer import rotvec_matrix
from boneforge.rig import (
    Pose,
    RigidTransform,
    canonical_pose,
    compose_world,
    leaf_bones,
    leaf_world_arrays,
)
from boneforge.skinning import bone_distances, forward_warp, pose_surface
from boneforge.synth import (
    ScenarioData,
    SynthScenario,
    box_mesh,
    capsule_mesh,
    make_scenario,
    perturb_pose,
)


class TestScenarioType:
    def test_valid_kinds(self):
        for kind in ("chain-1", "chain-7", "quadruped", "dumbbell"):
            assert SynthScenario(kind).kind == kind

    @pytest.mark.parametrize("kind", ["chain", "chain-0", "biped", "chain-x"])
    def test_bad_kind_rejected(self, kind):
        with pytest.raises(ValueError):
            SynthScenario(kind)

    def test_bad_counts_rejected(self):
        with pytest.raises(ValueError, match="n_frames"):
            SynthScenario("chain-3", n_frames=0)
        with pytest.raises(ValueError, match="noise"):
            SynthScenario("chain-3", noise=-0.1)


class TestPrimitives:
    @pytest.mark.parametrize("radius,hl", [(0.25, 0.35), (0.1, 0.0), (0.5, 1.0)])
    def test_capsule_vertices_lie_on_the_capsule(self, radius, hl):
        mesh = capsule_mesh(radius, hl)
        for v in mesh.vertices:
            if abs(v[0]) <= hl + 1e-12:
                assert abs(np.hypot(v[1], v[2]) - radius) < 1e-12
            else:
                c = np.array([np.sign(v[0]) * hl, 0.0, 0.0])
                assert abs(np.linalg.norm(v - c) - radius) < 1e-12

    def test_capsule_extents(self):
        mesh = capsule_mesh(0.25, 0.35)
        lo, hi = mesh.vertices.min(0), mesh.vertices.max(0)
        assert abs(hi[0] - 0.6) < 1e-12 and abs(lo[0] + 0.6) < 1e-12
        assert abs(hi[1] - 0.25) < 1e-9 and abs(hi[2] - 0.25) < 1e-9

    def test_capsule_validation(self):
        with pytest.raises(ValueError):
            capsule_mesh(0.0, 1.0)
        with pytest.raises(ValueError):
            capsule_mesh(0.1, 1.0, segments=2)

    def test_box_extents_and_resolution(self):
        mesh = box_mesh((1.0, 0.5, 0.25), res=2)
        lo, hi = mesh.vertices.min(0), mesh.vertices.max(0)
        assert np.allclose(hi, [1.0, 0.5, 0.25]) and np.allclose(lo, -hi)
        assert len(mesh.triangles) == 6 * 2 * 2 * 2
        with pytest.raises(ValueError):
            box_mesh((1.0, -0.5, 0.25))


class TestMakeScenario:
    def test_single_frame_is_canonical(self):
        data = make_scenario(SynthScenario("chain-3", n_frames=1))
        assert len(data.frame_meshes) == 1
        dev = np.abs(data.frame_meshes[0].vertices - data.mesh.vertices).max()
        assert dev < 1e-12

    def test_frame_meshes_are_forward_warps(self):
        data = make_scenario(SynthScenario("chain-3", n_frames=4, seed=3))
        pc = canonical_pose(data.rig)
        for pose, frame in zip(data.poses, data.frame_meshes):
            direct = forward_warp(
                data.mesh.vertices, data.rig, pc, pose,
                weights=data.skinned.cached_weights,
            )
            assert np.array_equal(direct, frame.vertices)

    def test_bend_at_joint_two_moves_distal_segments_rigidly(self):
        data = make_scenario(SynthScenario("chain-3"))
        rig = data.rig
        pc = canonical_pose(rig)
        cur = pc.local("j2")
        pose = Pose("bent", {
            **pc.locals,
            "j2": RigidTransform(
                rotvec_matrix([0, 0, np.deg2rad(30)]) @ cur.rotation, cur.translation
            ),
        })
        warped = pose_surface(data.skinned, rig, pc, pose)
        rigid = compose_world(rig, pose)["j2"] @ compose_world(rig, pc)["j2"].inverse()

        w = data.skinned.cached_weights
        onehot = w.max(axis=1) > 1 - 1e-9
        leaf_of = w.argmax(axis=1)
        ids = list(data.skinned.leaf_ids)
        distal = onehot & np.isin(leaf_of, [ids.index("s2"), ids.index("s3")])
        proximal = onehot & (leaf_of == ids.index("s1"))
        assert distal.sum() > 100 and proximal.sum() > 100
        assert np.abs(
            warped[distal] - rigid.apply(data.mesh.vertices[distal])
        ).max() < 1e-6
        assert np.abs(warped[proximal] - data.mesh.vertices[proximal]).max() < 1e-6

    def test_same_seed_bit_identical(self):
        a = make_scenario(SynthScenario("quadruped", n_frames=3, seed=5, noise=0.01))
        b = make_scenario(SynthScenario("quadruped", n_frames=3, seed=5, noise=0.01))
        assert np.array_equal(a.mesh.vertices, b.mesh.vertices)
        for x, y in zip(a.frame_meshes, b.frame_meshes):
            assert np.array_equal(x.vertices, y.vertices)
        for x, y in zip(a.masks, b.masks):
            assert np.array_equal(x.values, y.values)

    def test_different_seeds_differ(self):
        a = make_scenario(SynthScenario("chain-3", n_frames=3, seed=1))
        b = make_scenario(SynthScenario("chain-3", n_frames=3, seed=2))
        assert not np.array_equal(a.frame_meshes[1].vertices, b.frame_meshes[1].vertices)

    def test_quadruped_structure(self):
        data = make_scenario(SynthScenario("quadruped"))
        assert len(data.rig.roots) == 6
        assert len(leaf_bones(data.rig)) == 12
        assert len(data.rig.bones) == 18
        assert max(data.rig.depth_of.values()) == 2

    def test_noise_jitters_vertices(self):
        clean = make_scenario(SynthScenario("chain-2"))
        noisy = make_scenario(SynthScenario("chain-2", noise=0.02))
        dev = np.abs(clean.mesh.vertices - noisy.mesh.vertices)
        assert dev.max() > 0.01
        assert dev.max() < 0.2

    def test_masks_carry_their_camera(self):
        data = make_scenario(SynthScenario("dumbbell", n_frames=2))
        assert len(data.masks) == 2
        for m in data.masks:
            assert m.camera is data.camera
            assert m.values.shape == (64, 64)

    def test_plain_binding_available(self):
        data = make_scenario(SynthScenario("chain-3"), delta_sharp=0.0)
        assert data.skinned.cached_weights.max() < 1 - 1e-9


class TestRegularizerFloors:
    """Ground truth must sit exactly on the loss floor for every kind."""

    @pytest.mark.parametrize("kind", ["chain-3", "chain-5", "quadruped", "dumbbell"])
    def test_overlap_and_coverage_are_zero(self, kind):
        occ = OccupancyConfig()
        data = make_scenario(SynthScenario(kind))
        pc = canonical_pose(data.rig)
        pts = sample_surface(data.mesh, 2500, seed=0).points
        lo, _ = overlap_loss(pts, data.rig, pc, occ)
        lc, _ = coverage_loss(pts, data.rig, pc, occ)
        assert lo == 0.0
        assert lc == 0.0


class TestMaskChordProperty:
    def test_thick_chords_render_nearly_opaque(self):
        """Rays crossing >= 10/density_scale of bone interior must saturate."""
        occ = OccupancyConfig()
        data = make_scenario(SynthScenario("chain-3"))
        pc = canonical_pose(data.rig)
        origin, dirs = pixel_rays(data.camera)
        ids, rot, cen, sca = leaf_world_arrays(data.rig, pc)
        span = np.linalg.norm(origin - data.mesh.vertices.mean(0)) + 10.0
        ts = np.linspace(0.0, span, 600)
        chords = np.zeros(len(dirs))
        for s in range(0, len(dirs), 512):
            seg = dirs[s:s + 512]
            pts = (origin[None, None, :] + ts[None, :, None] * seg[:, None, :])
            d = bone_distances(pts.reshape(-1, 3), rot, cen, sca)
            dmin = d.min(axis=1)
            inside = dmin.reshape(len(seg), -1) <= occ.gamma
            chords[s:s + 512] = inside.sum(axis=1) * (ts[1] - ts[0])
        thick = chords >= 10.0 / occ.density_scale
        assert thick.sum() > 50
        assert data.masks[0].values.ravel()[thick].min() > 0.99


class TestPerturbPose:
    def _rig(self):
        return make_scenario(SynthScenario("chain-3")).rig

    def test_zero_magnitude_is_identity(self):
        rig = self._rig()
        pc = canonical_pose(rig)
        assert perturb_pose(rig, pc, 0.0, seed=3) is pc

    def test_rotation_geodesic_is_exactly_magnitude(self):
        rig = self._rig()
        pc = canonical_pose(rig)
        mag = np.deg2rad(20)
        pose = perturb_pose(rig, pc, mag, seed=1)
        for b in rig.bone_order():
            rel = pose.local(b).rotation @ pc.local(b).rotation.T
            ang = np.arccos(np.clip((np.trace(rel) - 1) / 2, -1.0, 1.0))
            assert abs(ang - mag) < 1e-9

    def test_translation_scales_with_bone_size(self):
        rig = self._rig()
        pc = canonical_pose(rig)
        mag = 0.3
        pose = perturb_pose(rig, pc, mag, seed=2)
        for b in rig.bone_order():
            shift = np.linalg.norm(
                pose.local(b).translation - pc.local(b).translation
            )
            assert abs(shift - mag * float(np.mean(rig.bones[b].scale))) < 1e-9

    def test_seeds_give_different_poses(self):
        rig = self._rig()
        pc = canonical_pose(rig)
        a = perturb_pose(rig, pc, 0.2, seed=1)
        b = perturb_pose(rig, pc, 0.2, seed=2)
        assert any(
            not np.array_equal(a.local(k).rotation, b.local(k).rotation)
            for k in rig.bones
        )

    def test_deterministic_per_seed(self):
        rig = self._rig()
        pc = canonical_pose(rig)
        a = perturb_pose(rig, pc, 0.2, seed=9)
        b = perturb_pose(rig, pc, 0.2, seed=9)
        for k in rig.bones:
            assert np.array_equal(a.local(k).rotation, b.local(k).rotation)
            assert np.array_equal(a.local(k).translation, b.local(k).translation)

    def test_negative_magnitude_rejected(self):
        rig = self._rig()
        with pytest.raises(ValueError, match="magnitude"):
            perturb_pose(rig, canonical_pose(rig), -0.1, seed=0)
