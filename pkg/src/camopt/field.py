"""Learned observation field: attention over attributed voxels.

The field maps a spatial query (position + normal) to an estimate of the
observation-attribute triple by encoding voxel offsets relative to the query
with a small MLP and attending over the snapshot of attributed voxels. It is
differentiable with respect to query positions, which is what lets camera
poses follow its gradient.

The attention logits are computed in a folded form. With the encoder
enc(x) = relu(x @ W1 + b1) @ W2 + b2 and keys K_m = enc([C_m - X_q, N_m]) @ WK,
the logit Qrow . K_m / sqrt(dk) expands to

    relu(A_m + B_q) . Z_q + const_q,

where A_m = [C_m, N_m] @ W1 + b1 depends only on the voxel, B_q = -X_q @ W1[:3]
only on the query position, and Z_q = (W2 @ WK) @ Qrow_q / sqrt(dk). The
per-query constant shifts every logit of a row equally, so softmax discards
it and it is dropped. This avoids materializing per-pair encoder activations
through two linear layers and keeps the hot loop in one fused kernel.
"""

import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from camopt import autodiff as ad
from camopt.attributes import ObservationAttributes, sup_vector
from camopt.visibility import CameraRig

HIDDEN = 32
D_K = 32
DEFAULT_WEIGHTS = (0.4, 0.3, 0.3)
INITIAL_BUDGET = 200
FINETUNE_BUDGET = 20
TRAIN_QUERY_POOL = 512
TRAIN_BATCH = 128
KEY_BASIS_CAP = 256
LOSS_QUERY_CAP = 16


def _strided(total: int, want: int) -> np.ndarray:
    """Deterministic evenly spaced index subset; all indices when they fit."""
    if total <= want:
        return np.arange(total)
    return np.arange(want) * total // want


class FieldQueryBatch:
    """Query positions (differentiable) with their unit normals."""

    def __init__(self, positions, normals):
        self.positions = positions if isinstance(positions, ad.Tensor) else \
            ad.Tensor(np.asarray(positions, dtype=np.float64))
        self.normals = np.asarray(normals, dtype=np.float64)
        if self.positions.data.ndim != 2 or self.positions.data.shape[1] != 3:
            raise ValueError("positions must be (q, 3)")
        if self.normals.shape != self.positions.data.shape:
            raise ValueError("normals must match positions in shape")
        if len(self.normals) == 0:
            raise ValueError("empty query batch")


class ObservationField:
    """Encoder + attention weights plus the attributed-voxel snapshot."""

    def __init__(self, seed: int = 0, key_cap: int = KEY_BASIS_CAP,
                 weights: Optional[dict] = None):
        if weights is None:
            # WQ/WK start small so initial attention is near-uniform: a large
            # random init produces confidently wrong peaks that the budgeted
            # training cannot unlearn at the fixed learning rate. Positive b1
            # keeps most ReLU units live from step one.
            rng = np.random.default_rng(seed)
            weights = {
                "W1": rng.normal(0.0, np.sqrt(2.0 / 6.0), size=(6, HIDDEN)),
                "b1": np.full(HIDDEN, 0.5),
                "W2": rng.normal(0.0, np.sqrt(2.0 / HIDDEN), size=(HIDDEN, HIDDEN)),
                "b2": np.zeros(HIDDEN),
                "WQ": rng.normal(0.0, 0.05, size=(HIDDEN, D_K)),
                "WK": rng.normal(0.0, 0.05, size=(HIDDEN, D_K)),
            }
        self.W1 = ad.Tensor(weights["W1"], requires_grad=True)
        self.b1 = ad.Tensor(weights["b1"], requires_grad=True)
        self.W2 = ad.Tensor(weights["W2"], requires_grad=True)
        self.b2 = ad.Tensor(weights["b2"], requires_grad=True)
        self.WQ = ad.Tensor(weights["WQ"], requires_grad=True)
        self.WK = ad.Tensor(weights["WK"], requires_grad=True)
        for name in ("W1", "b1", "W2", "b2", "WQ", "WK"):
            if not np.all(np.isfinite(getattr(self, name).data)):
                raise ValueError(f"{name} contains non-finite values")
        self.adam = ad.AdamState(self.params())
        self.key_cap = key_cap
        self.centers = None
        self.normals = None
        self.values = None
        self.key_idx = None
        self.K = None
        self.sup = None
        self.trained = False

    def params(self):
        return [self.W1, self.b1, self.W2, self.b2, self.WQ, self.WK]

    def const_params(self):
        """Same weight values detached from the tape, for pose-only passes."""
        return [ad.Tensor(p.data) for p in self.params()]

    @property
    def voxel_count(self) -> int:
        return 0 if self.centers is None else len(self.centers)

    def snapshot(self, grid, attrs: ObservationAttributes):
        if len(attrs) != len(grid.centers):
            raise ValueError("attribute count must match voxel count")
        if len(grid.centers) == 0:
            raise ValueError("cannot snapshot an empty grid")
        self.centers = np.asarray(grid.centers, dtype=np.float64).copy()
        self.normals = np.asarray(grid.normals, dtype=np.float64).copy()
        self.values = attrs.stack()
        self.key_idx = _strided(len(self.centers), self.key_cap)
        self.K = attrs.K
        self.sup = sup_vector(attrs.K)

    def _require_snapshot(self):
        if self.centers is None:
            raise ValueError("field has no attributed voxel snapshot yet")


def _attention(field: ObservationField, pos_t: ad.Tensor, normals: np.ndarray, params):
    """Shared forward pass; returns (clamped outputs (q, 3), attention (q, mk))."""
    W1, b1, W2, b2, WQ, WK = params
    kidx = field.key_idx
    basis_in = np.concatenate([field.centers[kidx], field.normals[kidx]], axis=1)
    A = ad.add(ad.matmul(ad.Tensor(basis_in), W1), b1)                     # (mk, 32)
    B = ad.mul(ad.matmul(pos_t, W1[0:3]), ad.Tensor(-1.0))                 # (q, 32)
    q_in = np.concatenate([np.zeros_like(normals), normals], axis=1)
    enc_q = ad.add(ad.matmul(ad.relu(ad.add(ad.matmul(ad.Tensor(q_in), W1), b1)), W2), b2)
    qrow = ad.matmul(enc_q, WQ)                                            # (q, dk)
    folded = ad.mul(ad.matmul(W2, WK), ad.Tensor(1.0 / np.sqrt(D_K)))      # (32, dk)
    Z = ad.matmul(qrow, ad.transpose(folded))                              # (q, 32)
    att = ad.softmax(ad.pairwise_scores(A, B, Z))
    out = ad.clamp(ad.matmul(att, ad.Tensor(field.values[kidx])), 0.0, field.sup)
    return out, att


def query(field: ObservationField, batch: FieldQueryBatch) -> ad.Tensor:
    """Attributes at the query points; differentiable in positions/weights."""
    field._require_snapshot()
    if not field.trained:
        raise ValueError("field must be trained (lean_neof) before querying")
    out, _ = _attention(field, batch.positions, batch.normals, field.params())
    return out


def attention_weights(field: ObservationField, batch: FieldQueryBatch) -> np.ndarray:
    field._require_snapshot()
    _, att = _attention(field, batch.positions, batch.normals, field.const_params())
    return att.data


def lean_neof(field: Optional[ObservationField], grid, attrs: ObservationAttributes,
              budget: Optional[int] = None, seed: int = 0) -> ObservationField:
    """Fit (or refresh) the field against the current attribute snapshot.

    A fresh field is created and trained for the initial budget when none is
    given; an existing field keeps its weights and Adam state and fine-tunes
    for the smaller budget. Budget 0 only swaps in the new snapshot.
    """
    if field is None:
        field = ObservationField(seed=seed)
        if budget is None:
            budget = INITIAL_BUDGET
    elif budget is None:
        budget = FINETUNE_BUDGET
    field.snapshot(grid, attrs)
    m = field.voxel_count
    pool = _strided(m, TRAIN_QUERY_POOL)
    for step in range(budget):
        if len(pool) > TRAIN_BATCH:
            start = (step * TRAIN_BATCH) % len(pool)
            idx = pool[(start + np.arange(TRAIN_BATCH)) % len(pool)]
        else:
            idx = pool
        pos = ad.Tensor(field.centers[idx])
        out, _ = _attention(field, pos, field.normals[idx], field.params())
        diff = ad.sub(out, ad.Tensor(field.values[idx]))
        loss = ad.mean(ad.mul(diff, diff))
        loss.backward()
        ad.adam_step(field.params(), field.adam)
    field.trained = True
    return field


# ---------------------------------------------------------------------------
# pose-differentiable placement loss
# ---------------------------------------------------------------------------

@dataclass
class CapturedCamera:
    """A camera's visible voxels frozen in its local frame at capture time."""
    local: np.ndarray     # (s, 3) sampled voxel centers in camera coordinates
    normals: np.ndarray   # (s, 3) voxel normals, world frame at capture
    scale: float          # |visible set| / s, undoes the sampling in the sum
    empty: bool


def capture_visible(field: ObservationField, rig: CameraRig, visible_sets,
                    query_cap: int = LOSS_QUERY_CAP):
    """Store each camera's visible voxel centers in its own frame so their
    world positions become a differentiable function of the pose."""
    field._require_snapshot()
    caps = []
    for pose, vis in zip(rig.poses, visible_sets):
        rows = np.asarray(sorted(vis), dtype=np.intp)
        if len(rows) == 0:
            caps.append(CapturedCamera(np.zeros((0, 3)), np.zeros((0, 3)), 1.0, True))
            continue
        take = rows[_strided(len(rows), query_cap)]
        local = (field.centers[take] - pose.position) @ pose.rotation()
        caps.append(CapturedCamera(local=local, normals=field.normals[take].copy(),
                                   scale=len(rows) / len(take), empty=False))
    return caps


def _rotation_rows(rot6_t: ad.Tensor) -> ad.Tensor:
    """(3, 3) matrix whose rows are the orthonormalized camera axes, i.e. the
    transpose of the rotation; world = local @ rows + position."""
    a = rot6_t[0:3]
    b = rot6_t[3:6]
    c1 = ad.normalize(a)
    proj = ad.sum_(ad.mul(c1, b))
    c2 = ad.normalize(ad.sub(b, ad.mul(c1, proj)))
    c3 = ad.cross3(c1, c2)
    return ad.concat([ad.reshape(c1, (1, 3)), ad.reshape(c2, (1, 3)),
                      ad.reshape(c3, (1, 3))], axis=0)


def placement_loss_graph(field: ObservationField, position_ts, rot6_ts, captures,
                         weights=DEFAULT_WEIGHTS, params=None):
    """Differentiable loss over pose parameter tensors.

    Empty-visibility cameras contribute nothing to the attribute sum (their
    share of the loss stays at the componentwise maximum) and receive no
    gradient. Returns (scalar loss, component vector) tensors.
    """
    field._require_snapshot()
    if params is None:
        params = field.const_params()
    k = len(captures)
    n = field.voxel_count
    sup = field.sup

    world_parts, normal_parts, spans, scales = [], [], [], []
    q0 = 0
    for pos_t, rot_t, cap in zip(position_ts, rot6_ts, captures):
        if cap.empty:
            continue
        rows = _rotation_rows(rot_t)
        world = ad.add(ad.matmul(ad.Tensor(cap.local), rows), ad.reshape(pos_t, (1, 3)))
        world_parts.append(world)
        normal_parts.append(cap.normals)
        spans.append((q0, q0 + len(cap.local)))
        scales.append(cap.scale)
        q0 += len(cap.local)

    w_t = ad.Tensor(np.asarray(weights, dtype=np.float64))
    if not world_parts:
        L_vec = ad.Tensor(sup.copy())
        return ad.sum_(ad.mul(L_vec, w_t)), L_vec

    pos_all = ad.concat(world_parts, axis=0)
    normals_all = np.concatenate(normal_parts, axis=0)
    out, _ = _attention(field, pos_all, normals_all, params)

    total = None
    for (lo, hi), scale in zip(spans, scales):
        part = ad.mul(ad.sum_(out[lo:hi], axis=0), ad.Tensor(scale))
        total = part if total is None else ad.add(total, part)
    L_vec = ad.sub(ad.Tensor(sup.copy()), ad.mul(total, ad.Tensor(1.0 / (k * n))))
    return ad.sum_(ad.mul(L_vec, w_t)), L_vec


@dataclass
class PlacementLoss:
    total: float
    components: np.ndarray        # (3,) [L_vis, L_cc, L_co]
    position_grads: np.ndarray    # (k, 3)
    rot6_grads: np.ndarray        # (k, 6)
    empty: np.ndarray             # (k,) bool, cameras flagged for resampling


def placement_loss(field: ObservationField, rig: CameraRig, visible_sets,
                   weights=DEFAULT_WEIGHTS, query_cap: int = LOSS_QUERY_CAP,
                   field_grads: bool = False) -> PlacementLoss:
    """Loss of the rig at its current poses, with pose gradients.

    With field_grads=True the field's own weight tensors accumulate gradients
    as well (read them off field.params() afterwards).
    """
    captures = capture_visible(field, rig, visible_sets, query_cap=query_cap)
    position_ts = [ad.Tensor(p.position.copy(), requires_grad=True) for p in rig.poses]
    rot6_ts = [ad.Tensor(p.rot6.copy(), requires_grad=True) for p in rig.poses]
    params = field.params() if field_grads else field.const_params()
    loss_t, vec_t = placement_loss_graph(field, position_ts, rot6_ts, captures,
                                         weights=weights, params=params)
    if loss_t.needs_grad:
        loss_t.backward()
    zeros3, zeros6 = np.zeros(3), np.zeros(6)
    return PlacementLoss(
        total=float(loss_t.data),
        components=vec_t.data.copy(),
        position_grads=np.stack([zeros3 if t.grad is None else t.grad for t in position_ts]),
        rot6_grads=np.stack([zeros6 if t.grad is None else t.grad for t in rot6_ts]),
        empty=np.array([c.empty for c in captures]),
    )


# ---------------------------------------------------------------------------
# weight serialization
# ---------------------------------------------------------------------------

_SECTION_SHAPES = [("W1", (6, HIDDEN)), ("b1", (HIDDEN,)), ("W2", (HIDDEN, HIDDEN)),
                   ("b2", (HIDDEN,)), ("WQ", (HIDDEN, D_K)), ("WK", (HIDDEN, D_K))]


def field_to_bytes(field: ObservationField) -> bytes:
    """Little-endian float64 sections, each prefixed with its element count."""
    blob = bytearray()
    for name, shape in _SECTION_SHAPES:
        arr = getattr(field, name).data
        assert arr.shape == shape
        blob += struct.pack("<Q", arr.size)
        blob += arr.astype("<f8").tobytes()
    return bytes(blob)


def field_from_bytes(blob: bytes, key_cap: int = KEY_BASIS_CAP) -> ObservationField:
    """Rebuild a field from serialized weights; the snapshot is not included
    and must be re-attached with lean_neof before querying."""
    weights = {}
    offset = 0
    for name, shape in _SECTION_SHAPES:
        if offset + 8 > len(blob):
            raise ValueError("truncated field blob")
        (count,) = struct.unpack_from("<Q", blob, offset)
        offset += 8
        expected = int(np.prod(shape))
        if count != expected:
            raise ValueError(f"section {name}: expected {expected} values, found {count}")
        end = offset + 8 * count
        if end > len(blob):
            raise ValueError("truncated field blob")
        weights[name] = np.frombuffer(blob, dtype="<f8", count=count, offset=offset).reshape(shape).copy()
        offset = end
    if offset != len(blob):
        raise ValueError("trailing bytes after field sections")
    return ObservationField(weights=weights, key_cap=key_cap)
