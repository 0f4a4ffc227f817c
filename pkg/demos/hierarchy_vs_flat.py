"""Why keep the tree? Count optimization steps with and without it.

A quadruped whose torso, legs, and tail hang off six roots is perturbed
by a rigid rotation per root. Retargeting with the 2-depth rig can fix
most of the error by moving six coarse bones; the flattened rig has to
herd all twelve leaves individually. Both use identical leaf geometry,
so the only difference is the parametrization.
"""

import math

import numpy as np

from boneforge import (
    OptimConfig,
    Pose,
    RigidTransform,
    SynthScenario,
    canonical_pose,
    flatten_rig,
    forward_warp,
    make_scenario,
    retarget,
    skin_surface,
)
from boneforge.geometry import aabb
from boneforge.optimizer import rotvec_matrix
from boneforge.rig import leaf_bones

scene = make_scenario(SynthScenario("quadruped", n_frames=1, seed=0))
rig, mesh = scene.rig, scene.mesh
pc = canonical_pose(rig)
skinned = skin_surface(mesh, rig, pc)

flat = flatten_rig(rig)
fpc = canonical_pose(flat)
flat_skinned = skin_surface(mesh, flat, fpc)
print(f"deep rig: {len(rig.bones)} bones over {len(rig.roots)} roots, "
      f"{len(leaf_bones(rig))} leaves")
print(f"flat rig: {len(flat.bones)} bones, all roots, same leaves")

lo, hi = aabb(mesh.vertices)
threshold = 0.01 * float(np.linalg.norm(hi - lo))
cfg = OptimConfig(step_size=0.5, max_steps=200, convergence_tol=0.0)
print(f"target: chamfer below {threshold:.4f} (1% of the bbox diagonal)\n")


def steps_to(report):
    for row in report.steps:
        if row["cd"] < threshold:
            return row["step"]
    return None


print(f"{'seed':>4} {'2-depth':>8} {'flat':>6}")
wins = 0
for seed in range(5):
    rng = np.random.default_rng(seed)
    pose = pc
    for root in rig.roots:
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        cur = pose.local(root)
        pose = pose.with_local(root, RigidTransform(
            rotvec_matrix(math.radians(20.0) * axis) @ cur.rotation,
            cur.translation))
    target = forward_warp(skinned.vertices, rig, pc,
                          Pose("t", dict(pose.locals)),
                          weights=skinned.cached_weights)
    deep = steps_to(retarget(rig, skinned, pc, target, cfg))
    shallow = steps_to(retarget(flat, flat_skinned, fpc, target, cfg))
    wins += deep is not None and (shallow is None or deep < shallow)
    print(f"{seed:>4} {str(deep):>8} {str(shallow):>6}")

print(f"\nhierarchy reached the threshold first on {wins}/5 seeds")
