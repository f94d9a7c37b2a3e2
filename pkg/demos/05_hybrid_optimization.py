"""One full hybrid placement run, with the trace unpacked.

Each outer iteration descends the camera poses against the frozen field
(grad phase), re-analyzes true visibility, refreshes the field, and -- once
descent stalls -- relocates flagged cameras onto the worst-covered regions
(non-grad phase). Commits must strictly lower the field loss, so the
recorded minimum only moves down.
"""
import numpy as np

from camopt import OptimizerConfig, ShapeSpec, generate_planar_shape, optimize

scene = generate_planar_shape(ShapeSpec("circle", {"radius": 1.0}, 96, seed=0))

config = OptimizerConfig(K=3, seed=0)
rig, trace = optimize(scene, k=10, config=config)

print(f"{'iter':>4} {'phase':>9} {'loss':>8} {'uc':>7} {'angle_q':>8} "
      f"{'steps':>5} {'commits':>7}")
for r in trace.records:
    print(f"{r.index:4d} {r.phase:>9} {r.loss:8.4f} {r.uc:7.3f} "
          f"{r.angle_quality:8.3f} {r.inner_steps:5d} {r.commits:7d}")

first, last = trace.records[0], trace.records[-1]
print(f"\nuncovered-coverage gap: {first.uc:.3f} -> {last.uc:.3f}")
print(f"angle quality:          {first.angle_quality:.3f} -> {last.angle_quality:.3f}")
rm = trace.running_min_loss
print("running-min loss is non-increasing:",
      bool(np.all(np.diff(rm) <= 1e-12)))

if trace.swaps:
    print(f"\n{len(trace.swaps)} relocation commits:")
    for s in trace.swaps[:8]:
        p = np.asarray(s["position"])[:2]
        print(f"  outer {s['iteration']}: camera {s['camera']} -> "
              f"({p[0]:+.2f}, {p[1]:+.2f}), loss {s['loss_before']:.4f} "
              f"-> {s['loss_after']:.4f}")
else:
    print("\nno relocations were needed this run")

# Ablations on the same seed: descent alone barely moves blind initial
# cameras; resampling alone does the coarse work; the hybrid finishes it.
for tag, kw in (("grad only", dict(non_grad_enabled=False)),
                ("non-grad only", dict(grad_enabled=False))):
    _, t = optimize(scene, 10, OptimizerConfig(K=3, seed=0), **kw)
    print(f"{tag:14s} final uc = {t.records[-1].uc:.3f}")
print(f"{'hybrid':14s} final uc = {last.uc:.3f}")
