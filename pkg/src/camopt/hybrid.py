"""Hybrid pose optimization: Adam on a differentiable proxy loss, alternated
with non-gradient elite resampling that relocates stuck or useless cameras
over the regions the coverage analysis says need observation most.
"""

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dfield
from typing import Optional

import numpy as np

from camopt import autodiff as ad
from camopt.attributes import attributes_from_coverage, sup_vector
from camopt.field import (
    FINETUNE_BUDGET,
    LOSS_QUERY_CAP,
    FieldQueryBatch,
    ObservationField,
    capture_visible,
    lean_neof,
    placement_loss_graph,
    query,
    _strided,
)
from camopt.metrics import coverage_optimality_gap, observation_angle_quality
from camopt.scene import PLANAR2D, TargetScene, voxelize
from camopt.visibility import (
    CameraIntrinsics,
    CameraPose,
    CameraRig,
    coverage_matrix,
    default_intrinsics,
    pose_from_forward,
    visible_set,
)

INNER_STEP_CAP = 100
BOUNDS_INFLATION = 1.5
CONTRIBUTION_MARGIN = 1.1   # "large loss" = this factor above the mean share


@dataclass(frozen=True)
class OptimizerConfig:
    K: int = 3
    weights: tuple = (0.4, 0.3, 0.3)
    eps_L: float = 1e-4        # loss-stall tolerance
    eps_P: float = 1e-4        # pose step-update stopping tolerance
    eps_g: float = 1e-4        # per-camera gradient-norm convergence tolerance
    m: int = 5                 # candidate regions for resampling
    max_outer: int = 12
    seed: int = 0
    inner_cap: int = INNER_STEP_CAP
    query_cap: int = LOSS_QUERY_CAP
    resolution: Optional[float] = None
    threads: int = 1
    # pose steps are Adam-normalized, so the rate is roughly meters moved per
    # inner step. The rate decays across the whole run (the optimizer state
    # persists through every gradient phase): early phases travel toward what
    # the field flags as needy, late phases shrink until per-step loss changes
    # drop under eps_L, descent stalls immediately, and the step-update test
    # can terminate the loop. Without the decay the descent keeps trading
    # visibility for predicted need forever and the loop never settles.
    pose_lr: float = 1e-3
    pose_lr_decay: float = 0.5
    pose_lr_decay_every: int = 10

    def __post_init__(self):
        if min(self.eps_L, self.eps_P, self.eps_g) <= 0:
            raise ValueError("tolerances must be positive")
        if self.m < 1:
            raise ValueError("need at least one candidate region")
        if self.max_outer < 1 or self.inner_cap < 1:
            raise ValueError("iteration caps must be at least 1")
        if len(self.weights) != 3 or min(self.weights) < 0:
            raise ValueError("weights must be three non-negative numbers")
        if not 0.0 < self.pose_lr_decay <= 1.0 or self.pose_lr_decay_every < 1:
            raise ValueError("pose learning-rate schedule is out of range")


@dataclass
class IterationRecord:
    index: int
    phase: str               # "init" | "grad" | "non_grad"
    loss: float
    components: np.ndarray   # (3,)
    uc: float
    angle_quality: float
    poses: tuple             # CameraPose snapshot
    wall_ms: float
    inner_steps: int = 0
    commits: int = 0


@dataclass
class OptimizationTrace:
    records: list = dfield(default_factory=list)
    swaps: list = dfield(default_factory=list)

    def add(self, record: IterationRecord):
        if self.records:
            if len(record.poses) != len(self.records[0].poses):
                raise ValueError("camera count changed mid-run")
            if record.index < self.records[-1].index:
                raise ValueError("iteration records out of order")
        self.records.append(record)

    @property
    def losses(self) -> np.ndarray:
        return np.array([r.loss for r in self.records])

    @property
    def running_min_loss(self) -> np.ndarray:
        return np.minimum.accumulate(self.losses)


# ---------------------------------------------------------------------------
# initialization
# ---------------------------------------------------------------------------

def _containment_test(scene: TargetScene):
    """Point-in-convex-hull predicate over the scene's points, or None when
    the cloud is too degenerate to enclose any volume."""
    from scipy.spatial import Delaunay, QhullError

    pts = scene.points[:, :2] if scene.mode == PLANAR2D else scene.points
    if len(pts) <= pts.shape[1]:
        return None
    try:
        tri = Delaunay(pts)
    except QhullError:
        return None

    def inside(p):
        q = p[:2] if scene.mode == PLANAR2D else p
        return tri.find_simplex(q[None])[0] >= 0

    return inside


def initialize(scene: TargetScene, k: int, seed: int, intrinsics=None) -> CameraRig:
    """Random rig: positions uniform in the scene bounds inflated about their
    center, rejecting samples inside the object's convex hull; orientations
    uniform (in-plane for planar scenes)."""
    if k < 1:
        raise ValueError("need at least one camera")
    if intrinsics is None:
        diag = scene.diagonal
        intrinsics = default_intrinsics(diag if diag > 1e-9 else None)
    rng = np.random.default_rng(seed)
    bmin, bmax = scene.bounds[0], scene.bounds[1]
    center = (bmin + bmax) / 2.0
    half = (bmax - bmin) / 2.0 * BOUNDS_INFLATION
    # degenerate axes get a fallback span so sampling has somewhere to go;
    # the planar z-axis is pinned to the shape plane instead
    fallback = max(scene.diagonal / 2.0, 1.0)
    planar = scene.mode == PLANAR2D
    for axis in range(3):
        if half[axis] < 1e-9 and not (planar and axis == 2):
            half[axis] = fallback
    lo, hi = center - half, center + half
    inside = _containment_test(scene)

    poses = []
    tries = 0
    while len(poses) < k:
        tries += 1
        if tries > 10_000:
            raise RuntimeError("initialization rejection sampling exceeded 10000 tries")
        p = rng.uniform(lo, hi)
        if planar:
            p[2] = center[2]
        if inside is not None and inside(p):
            continue
        if planar:
            theta = rng.uniform(0.0, 2.0 * np.pi)
            forward = np.array([np.cos(theta), np.sin(theta), 0.0])
        else:
            forward = rng.normal(size=3)
            while np.linalg.norm(forward) < 1e-9:
                forward = rng.normal(size=3)
        poses.append(pose_from_forward(p, forward))
    return CameraRig(tuple(poses), intrinsics)


# ---------------------------------------------------------------------------
# gradient phase
# ---------------------------------------------------------------------------

def _visible_sets(E) -> list:
    return [set(int(j) for j in np.nonzero(E.entries[i])[0]) for i in range(len(E.entries))]


class PoseOptimizer:
    """Pose tensors plus one Adam state shared across every gradient phase of
    a run, so the scheduled learning-rate decay actually accumulates. A fresh
    optimizer per phase would restart at the initial rate forever and the
    descent would never quiesce enough for the step-update termination test.
    """

    def __init__(self, rig: CameraRig, config: "OptimizerConfig"):
        self.pos_ts = [ad.Tensor(p.position.copy(), requires_grad=True) for p in rig.poses]
        self.rot_ts = [ad.Tensor(p.rot6.copy(), requires_grad=True) for p in rig.poses]
        self.params = []
        for pt, rt in zip(self.pos_ts, self.rot_ts):
            self.params.extend([pt, rt])
        self.adam = ad.AdamState(self.params, lr=config.pose_lr,
                                 decay=config.pose_lr_decay,
                                 decay_every=config.pose_lr_decay_every)

    def sync_from(self, rig: CameraRig, reset_moments=()):
        """Copy rig poses into the tensors; cameras whose pose was replaced
        outside the gradient flow get their Adam moments zeroed (the old
        moments described a basin the camera no longer occupies)."""
        for i, pose in enumerate(rig.poses):
            self.pos_ts[i].data = pose.position.copy()
            self.rot_ts[i].data = pose.rot6.copy()
        for i in reset_moments:
            for j in (2 * i, 2 * i + 1):
                self.adam.m[j][:] = 0.0
                self.adam.v[j][:] = 0.0


def grad_phase(rig: CameraRig, field: ObservationField, grid, config: OptimizerConfig,
               planar: bool = False, visible_sets=None, opt: PoseOptimizer | None = None):
    """Adam descent on all pose parameters against the frozen field, visible
    sets held fixed for the phase. Stops when the per-step loss change drops
    below eps_L, a step fails to improve the loss (the step is reverted), or
    the inner cap is hit.

    Returns (rig', last PlacementLoss-like summary dict, per-camera gradient
    norms, inner steps taken, converged flag).
    """
    if visible_sets is None:
        E = coverage_matrix(rig, grid)
        visible_sets = _visible_sets(E)
    k = len(rig)
    if opt is None:
        opt = PoseOptimizer(rig, config)
    else:
        opt.sync_from(rig)
    pos_ts, rot_ts, params, adam = opt.pos_ts, opt.rot_ts, opt.params, opt.adam
    const_weights = field.const_params()

    # the local-frame capture stays frozen for the whole phase: the visible
    # bundle rides along with the pose, so pose motion registers as moving
    # query points in the field (re-capturing every step would pin the
    # queries back onto the voxel centers and freeze the loss value)
    caps = capture_visible(field, rig, visible_sets, query_cap=config.query_cap)
    empty = np.array([c.empty for c in caps])

    grad_norms = np.zeros(k)
    L_prev = None
    L_last = np.nan
    vec_last = field.sup.copy() if field.sup is not None else np.zeros(3)
    snapshot = None
    steps = 0
    converged = False
    for _ in range(config.inner_cap):
        loss_t, vec_t = placement_loss_graph(field, pos_ts, rot_ts, caps,
                                             weights=config.weights, params=const_weights)
        L_here = float(loss_t.data)
        if not np.isfinite(L_here):
            raise RuntimeError(f"non-finite placement loss {L_here!r} during gradient phase")
        if L_prev is not None and L_here > L_prev:
            # reject the step that got us here; the rig the resampler placed
            # is often already at a proxy minimum and a blind Adam step off
            # it would trade away visibility for nothing
            for p, saved in zip(params, snapshot):
                p.data = saved
            converged = True
            break
        L_last = L_here
        vec_last = vec_t.data.copy()
        if loss_t.needs_grad:
            loss_t.backward()
        for p in params:
            if p.grad is None:
                p.grad = np.zeros_like(p.data)
        if planar:
            for pt, rt in zip(pos_ts, rot_ts):
                pt.grad[2] = 0.0
                rt.grad[2:] = 0.0   # keep the right-axis in-plane and up pinned
        grad_norms = np.array([
            np.sqrt(np.sum(pt.grad ** 2) + np.sum(rt.grad ** 2))
            for pt, rt in zip(pos_ts, rot_ts)])
        if L_prev is not None and abs(L_here - L_prev) < config.eps_L:
            converged = True
            break
        snapshot = [p.data.copy() for p in params]
        ad.adam_step(params, adam)
        steps += 1
        L_prev = L_here

    final_poses = tuple(CameraPose(pt.data.copy(), rt.data.copy())
                        for pt, rt in zip(pos_ts, rot_ts))
    out_rig = CameraRig(final_poses, rig.intrinsics)
    summary = {"loss": L_last, "components": vec_last, "empty": empty}
    return out_rig, summary, grad_norms, steps, converged


# ---------------------------------------------------------------------------
# non-gradient phase (elite resampling)
# ---------------------------------------------------------------------------

def worst_regions(grid, attrs, m: int):
    """Cluster the voxels that still need observation into up to m regions by
    greedy farthest-point seeding (distance weighted by residual coverage c),
    then summarize each region by its c-weighted centroid and mean normal."""
    c = attrs.c
    pool = np.nonzero(c > 1e-12)[0]
    if len(pool) == 0:
        return []
    pts = grid.centers[pool]
    w = c[pool]
    seeds = [int(pool[np.argmax(w)])]
    while len(seeds) < min(m, len(pool)):
        d = np.min(np.linalg.norm(pts[:, None, :] - grid.centers[seeds][None], axis=2), axis=1)
        score = w * d
        if score.max() <= 1e-12:
            break
        seeds.append(int(pool[np.argmax(score)]))
    assign = np.argmin(np.linalg.norm(pts[:, None, :] - grid.centers[seeds][None], axis=2), axis=1)
    regions = []
    for s in range(len(seeds)):
        rows = pool[assign == s]
        ww = c[rows][:, None]
        centroid = (grid.centers[rows] * ww).sum(axis=0) / ww.sum()
        nsum = (grid.normals[rows] * ww).sum(axis=0)
        norm = np.linalg.norm(nsum)
        normal = nsum / norm if norm > 1e-9 else grid.normals[seeds[s]].copy()
        regions.append((centroid, normal))
    return regions


def _region_poses(regions, intrinsics):
    dist = (intrinsics.near + intrinsics.far) / 2.0
    return [pose_from_forward(centroid + normal * dist, -normal)
            for centroid, normal in regions]


def _camera_attr_sums(field, grid, visible_sets, query_cap):
    """Per-camera componentwise sum of field attributes over the (sampled,
    rescaled) visible voxels — the additive decomposition the loss uses."""
    sums = np.zeros((len(visible_sets), 3))
    for i, vis in enumerate(visible_sets):
        rows = np.asarray(sorted(vis), dtype=np.intp)
        if len(rows) == 0:
            continue
        take = rows[_strided(len(rows), query_cap)]
        out = query(field, FieldQueryBatch(grid.centers[take], grid.normals[take])).data
        sums[i] = out.sum(axis=0) * (len(rows) / len(take))
    return sums


def _entries_from_sets(visible_sets, m: int):
    from camopt.visibility import CoverageMatrix

    entries = np.zeros((len(visible_sets), m), dtype=np.int8)
    for i, vis in enumerate(visible_sets):
        if vis:
            entries[i, sorted(vis)] = 1
    return CoverageMatrix(entries=entries, per_voxel_count=entries.sum(axis=0))


def non_grad_phase(rig: CameraRig, field: ObservationField, grid, attrs,
                   config: OptimizerConfig, grad_norms=None, visible_sets=None,
                   phase_converged: bool = False):
    """Relocate cameras that converged to a poor share of the loss (or see
    nothing) onto poses staring at the worst-covered regions, committing a
    replacement only when the proxy loss strictly decreases.

    A camera counts as descent-converged when its own gradient norm is below
    eps_g or when the caller reports the whole gradient phase stopped on its
    loss tolerance (Adam can stall in a flat basin with the raw gradient well
    above eps_g; without this the resampler would only ever rescue blind
    cameras).

    After every committed swap the attributes are re-derived from the updated
    visible sets and the field's value snapshot refreshed (no retraining):
    consumed need stops attracting further cameras, so successive relocations
    spread over distinct regions instead of piling onto the first one.

    Returns (rig', committed) where committed records each accepted swap.
    """
    k = len(rig)
    n = len(grid.centers)
    w = np.asarray(config.weights, dtype=np.float64)
    sup = sup_vector(attrs.K)
    if visible_sets is None:
        visible_sets = _visible_sets(coverage_matrix(rig, grid))
    visible_sets = [set(v) for v in visible_sets]
    if grad_norms is None:
        grad_norms = np.zeros(k)

    def evaluate_pose(pose):
        vis = visible_set(pose, rig.intrinsics, grid)
        if not vis:
            return vis, np.zeros(3)
        rows = np.asarray(sorted(vis), dtype=np.intp)
        take = rows[_strided(len(rows), config.query_cap)]
        out = query(field, FieldQueryBatch(grid.centers[take], grid.normals[take])).data
        return vis, out.sum(axis=0) * (len(rows) / len(take))

    poses = list(rig.poses)
    committed = []
    replaced = set()
    attrs_cur = attrs
    while True:
        regions = worst_regions(grid, attrs_cur, config.m)
        if not regions:
            break
        cand_poses = _region_poses(regions, rig.intrinsics)
        if config.threads > 1:
            with ThreadPoolExecutor(max_workers=config.threads) as pool:
                cand_eval = list(pool.map(evaluate_pose, cand_poses))
        else:
            cand_eval = [evaluate_pose(p) for p in cand_poses]

        sums = _camera_attr_sums(field, grid, visible_sets, config.query_cap)
        sizes = np.array([len(v) for v in visible_sets])
        L_cur = float(w @ (sup - sums.sum(axis=0) / (k * n)))

        contrib = np.empty(k)
        for i in range(k):
            if sizes[i] == 0:
                contrib[i] = float(w @ sup)
            else:
                contrib[i] = float(w @ (sup - sums[i] / sizes[i]))
        mean_contrib = contrib.mean()
        candidates = [
            i for i in range(k) if i not in replaced and (
                sizes[i] == 0
                or ((phase_converged or grad_norms[i] < config.eps_g)
                    and contrib[i] > CONTRIBUTION_MARGIN * mean_contrib))
        ]
        if not candidates:
            break
        best = None
        for i in candidates:
            for ci, (vis, s_new) in enumerate(cand_eval):
                L_new = L_cur - float(w @ (s_new - sums[i])) / (k * n)
                if best is None or L_new < best[0] - 1e-15:
                    best = (L_new, i, ci, vis, s_new)
        if best is None or best[0] >= L_cur:
            break
        L_new, cam, ci, vis, s_new = best
        committed.append({
            "camera": cam,
            "loss_before": L_cur,
            "loss_after": L_new,
            "position": cand_poses[ci].position.copy(),
        })
        poses[cam] = cand_poses[ci]
        visible_sets[cam] = vis
        replaced.add(cam)
        # fold the accepted swap back into the need estimate
        E = _entries_from_sets(visible_sets, n)
        positions = np.stack([p.position for p in poses])
        attrs_cur = attributes_from_coverage(E, positions, grid.centers,
                                             grid.normals, attrs.K)
        lean_neof(field, grid, attrs_cur, budget=0)
    if not committed:
        return rig, []
    return CameraRig(tuple(poses), rig.intrinsics), committed


# ---------------------------------------------------------------------------
# the full loop
# ---------------------------------------------------------------------------

def step_update(prev_poses, poses, diagonal: float) -> float:
    """Max over cameras of normalized position change plus geodesic rotation
    change (radians) — the pose-space stopping metric."""
    scale = diagonal if diagonal > 1e-9 else 1.0
    worst = 0.0
    for a, b in zip(prev_poses, poses):
        dp = np.linalg.norm(b.position - a.position) / scale
        Rrel = a.rotation().T @ b.rotation()
        ang = float(np.arccos(np.clip((np.trace(Rrel) - 1.0) / 2.0, -1.0, 1.0)))
        worst = max(worst, dp + ang)
    return worst


def _analyze(rig, grid, K):
    E = coverage_matrix(rig, grid)
    positions = np.stack([p.position for p in rig.poses])
    attrs = attributes_from_coverage(E, positions, grid.centers, grid.normals, K)
    return E, attrs


def _proxy_loss(field, rig, visible_sets, config):
    """Current loss value under the frozen field, no gradients needed."""
    caps = capture_visible(field, rig, visible_sets, query_cap=config.query_cap)
    pos_ts = [ad.Tensor(p.position.copy()) for p in rig.poses]
    rot_ts = [ad.Tensor(p.rot6.copy()) for p in rig.poses]
    loss_t, vec_t = placement_loss_graph(field, pos_ts, rot_ts, caps,
                                         weights=config.weights)
    return float(loss_t.data), vec_t.data.copy()


def optimize(scene: TargetScene, k: int, config: OptimizerConfig,
             grad_enabled: bool = True, non_grad_enabled: bool = True,
             intrinsics: CameraIntrinsics | None = None):
    """Full placement run. The two enable switches exist for ablation studies
    (gradient-only and resampling-only variants); both default on.

    Returns (final rig, OptimizationTrace).
    """
    grid = voxelize(scene, config.resolution)
    diag = scene.diagonal
    if intrinsics is None:
        intrinsics = default_intrinsics(diag if diag > 1e-9 else None)
    planar = scene.mode == PLANAR2D

    t0 = time.perf_counter()
    rig = initialize(scene, k, config.seed, intrinsics)
    E, attrs = _analyze(rig, grid, config.K)
    field = lean_neof(None, grid, attrs, seed=config.seed)
    sets = _visible_sets(E)
    L0, vec0 = _proxy_loss(field, rig, sets, config)

    trace = OptimizationTrace()
    trace.add(IterationRecord(
        index=0, phase="init", loss=L0, components=vec0,
        uc=coverage_optimality_gap(E, config.K),
        angle_quality=observation_angle_quality(rig, grid, E),
        poses=rig.poses, wall_ms=(time.perf_counter() - t0) * 1e3))

    opt = PoseOptimizer(rig, config) if grad_enabled else None
    L_outer_prev = L0
    prev_poses = rig.poses
    for outer in range(1, config.max_outer + 1):
        t0 = time.perf_counter()
        if grad_enabled:
            rig, summary, grad_norms, steps, converged = grad_phase(
                rig, field, grid, config, planar=planar, visible_sets=sets, opt=opt)
        else:
            # ablation: skip descent, keep analysis/resampling cadence
            caps = capture_visible(field, rig, sets, query_cap=config.query_cap)
            L_here, vec_here = _proxy_loss(field, rig, sets, config)
            summary = {"loss": L_here, "components": vec_here,
                       "empty": np.array([c.empty for c in caps])}
            grad_norms = np.zeros(len(rig))
            steps, converged = 0, True
        E, attrs = _analyze(rig, grid, config.K)
        field = lean_neof(field, grid, attrs)
        sets = _visible_sets(E)
        trace.add(IterationRecord(
            index=outer, phase="grad", loss=summary["loss"],
            components=summary["components"],
            uc=coverage_optimality_gap(E, config.K),
            angle_quality=observation_angle_quality(rig, grid, E),
            poses=rig.poses, wall_ms=(time.perf_counter() - t0) * 1e3,
            inner_steps=steps))

        # a phase that stopped short of the step cap stalled on its loss
        # tolerance; a capped phase still counts once outer-level progress dies
        stalled = converged or \
            abs(summary["loss"] - L_outer_prev) < config.eps_L
        L_outer_prev = summary["loss"]

        if non_grad_enabled and stalled:
            t1 = time.perf_counter()
            rig2, commits = non_grad_phase(rig, field, grid, attrs, config,
                                           grad_norms=grad_norms, visible_sets=sets,
                                           phase_converged=converged or not grad_enabled)
            if commits:
                rig = rig2
                E, attrs = _analyze(rig, grid, config.K)
                field = lean_neof(field, grid, attrs, budget=2 * FINETUNE_BUDGET)
                sets = _visible_sets(E)
                trace.swaps.extend({"iteration": outer, **c} for c in commits)
                if opt is not None:
                    opt.sync_from(rig, reset_moments=[c["camera"] for c in commits])
            L_ng, vec_ng = _proxy_loss(field, rig, sets, config)
            trace.add(IterationRecord(
                index=outer, phase="non_grad", loss=L_ng, components=vec_ng,
                uc=coverage_optimality_gap(E, config.K),
                angle_quality=observation_angle_quality(rig, grid, E),
                poses=rig.poses, wall_ms=(time.perf_counter() - t1) * 1e3,
                commits=len(commits)))

        if step_update(prev_poses, rig.poses, diag) < config.eps_P:
            break
        prev_poses = rig.poses
    return rig, trace
