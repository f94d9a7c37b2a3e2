"""Hybrid optimizer vs the two non-learned baselines on one scene.

All three are scored by exact visibility after the fact: the uncovered-
coverage gap uc (0 = every voxel seen K times) and the observation angle
quality (higher = better-spread viewpoints). The baselines optimize the
scalarized energy 0.4 * uc - 0.6 * angle_quality directly, so annealing can
win on its own objective; the hybrid, which never sees that energy, still
wins where it counts -- actual coverage.
"""
import time

import numpy as np

from camopt import (
    AnnealConfig,
    OptimizerConfig,
    ShapeSpec,
    evaluate_rig,
    generate_planar_shape,
    optimize,
    random_search,
    rig_energy,
    simulated_annealing,
    voxelize,
)

K, k = 3, 10
scene = generate_planar_shape(ShapeSpec("circle", {"radius": 1.0}, 96, seed=0))
grid = voxelize(scene)


def score(tag, rig, elapsed):
    rep = evaluate_rig(rig, grid, K)
    e = rig_energy(rig, grid, K)
    print(f"{tag:16s} uc={rep.uc:6.3f} angle_q={rep.angle_quality:6.3f} "
          f"energy={e:+7.3f} time={elapsed:5.1f}s")
    return rep


print(f"scene: circle, {len(grid.centers)} voxels, k={k} cameras, K={K}\n")

t0 = time.perf_counter()
rig_h, trace = optimize(scene, k, OptimizerConfig(K=K, seed=0))
score("hybrid", rig_h, time.perf_counter() - t0)

t0 = time.perf_counter()
rig_r = random_search(scene, k, trials=50, seed=0, K=K)
score("random x50", rig_r, time.perf_counter() - t0)

t0 = time.perf_counter()
rig_s, sa_trace = simulated_annealing(
    scene, k, AnnealConfig(T0=0.5, cooling=0.92, steps_per_temp=30,
                           perturb_scale=0.15, termination=0.002, seed=0), K=K)
score("annealing", rig_s, time.perf_counter() - t0)

best = [b["best_energy"] for b in sa_trace]
print(f"\nannealing chain: {len(sa_trace) - 1} temperature batches, "
      f"best energy {best[0]:+.3f} -> {best[-1]:+.3f} "
      f"(monotone: {bool(np.all(np.diff(best) <= 1e-12))})")

# Repeatability: the whole stack is seeded, so reruns agree exactly.
rig_h2, _ = optimize(scene, k, OptimizerConfig(K=K, seed=0))
same = all(np.array_equal(a.position, b.position)
           for a, b in zip(rig_h.poses, rig_h2.poses))
print("hybrid rerun reproduces poses exactly:", same)
