"""Central finite-difference oracle shared by the autodiff and loss tests."""

import numpy as np

from camopt import autodiff as ad


def finite_diff(func, leaves, h=1e-5):
    """Central-difference gradients of scalar func(leaves) per leaf array."""
    grads = []
    for leaf in leaves:
        g = np.zeros_like(leaf.data)
        flat = leaf.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            hi = float(func(leaves).data)
            flat[i] = orig - h
            lo = float(func(leaves).data)
            flat[i] = orig
            gflat[i] = (hi - lo) / (2.0 * h)
        grads.append(g)
    return grads


def backprop_grads(func, leaves):
    for leaf in leaves:
        leaf.zero_grad()
    out = func(leaves)
    out.backward()
    return [np.zeros_like(l.data) if l.grad is None else l.grad.copy() for l in leaves]


def max_rel_err(a, b):
    """Elementwise |a-b| / max(1, |a|, |b|), reduced to the worst entry."""
    denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


def gradcheck(func, leaves, tol=1e-4, h=1e-5):
    """Assert backprop and central differences agree on every leaf."""
    fd = finite_diff(func, leaves, h=h)
    bp = backprop_grads(func, leaves)
    worst = 0.0
    for f, b in zip(fd, bp):
        worst = max(worst, max_rel_err(f, b))
    assert worst < tol, f"gradcheck failed: max relative error {worst:.3e} >= {tol}"
    return worst


def away_from_kinks(rng, shape, margin=1e-3):
    """Random inputs with |x| bounded away from relu's kink at zero."""
    x = rng.uniform(margin, 1.0, size=shape)
    sign = np.where(rng.random(shape) < 0.5, -1.0, 1.0)
    return x * sign


def op_cases(seed):
    """One gradcheck case per supported op; returns (name, func, leaves) triples.

    Every case reduces to a scalar through plain sums so the finite-difference
    probe exercises the op under test and nothing else.
    """
    rng = np.random.default_rng(seed)
    t = lambda a: ad.Tensor(a, requires_grad=True)

    cases = []

    a = t(rng.normal(size=(3, 4)))
    b = t(rng.normal(size=(3, 4)))
    cases.append(("add", lambda ls: ad.sum_(ad.add(ls[0], ls[1])), [a, b]))

    a = t(rng.normal(size=(3, 4)))
    b = t(rng.normal(size=(4,)))
    cases.append(("add_broadcast", lambda ls: ad.sum_(ad.add(ls[0], ls[1])), [a, b]))

    a = t(rng.normal(size=(2, 5)))
    b = t(rng.normal(size=(2, 5)))
    cases.append(("sub", lambda ls: ad.sum_(ad.sub(ls[0], ls[1])), [a, b]))

    a = t(rng.normal(size=(4, 3)))
    b = t(rng.normal(size=(4, 3)))
    cases.append(("mul", lambda ls: ad.sum_(ad.mul(ls[0], ls[1])), [a, b]))

    a = t(rng.normal(size=(4, 1, 3)))
    b = t(rng.normal(size=(1, 5, 3)))
    cases.append(("mul_broadcast", lambda ls: ad.sum_(ad.mul(ls[0], ls[1])), [a, b]))

    a = t(rng.normal(size=(3, 3)))
    b = t(rng.uniform(0.5, 2.0, size=(3, 3)) * np.where(rng.random((3, 3)) < 0.5, -1, 1))
    cases.append(("div", lambda ls: ad.sum_(ad.div(ls[0], ls[1])), [a, b]))

    a = t(rng.uniform(0.3, 2.0, size=(4,)))
    cases.append(("pow", lambda ls: ad.sum_(ls[0] ** 1.7), [a]))

    a = t(rng.normal(size=(5, 3)))
    b = t(rng.normal(size=(3, 4)))
    cases.append(("matmul", lambda ls: ad.sum_(ad.matmul(ls[0], ls[1])), [a, b]))

    a = t(rng.normal(size=(2, 5, 3)))
    b = t(rng.normal(size=(3, 4)))
    cases.append(("matmul_batched", lambda ls: ad.sum_(ad.matmul(ls[0], ls[1])), [a, b]))

    a = t(away_from_kinks(rng, (4, 6)))
    cases.append(("relu", lambda ls: ad.sum_(ad.relu(ls[0])), [a]))

    a = t(rng.normal(size=(3, 4)))
    cases.append(("sin", lambda ls: ad.sum_(ad.sin(ls[0])), [a]))

    a = t(rng.normal(size=(3, 4)))
    cases.append(("cos", lambda ls: ad.sum_(ad.cos(ls[0])), [a]))

    a = t(rng.normal(size=(3, 5)))
    w = rng.normal(size=(5,))
    cases.append(
        ("softmax", lambda ls, w=w: ad.sum_(ad.mul(ad.softmax(ls[0]), ad.Tensor(w))), [a])
    )

    a = t(rng.normal(size=(4, 6)))
    cases.append(("sum_axis", lambda ls: ad.sum_(ad.mul(ad.sum_(ls[0], axis=1), ad.sum_(ls[0], axis=1))), [a]))

    a = t(rng.normal(size=(4, 6)))
    cases.append(("mean", lambda ls: ad.mean(ls[0]), [a]))

    a = t(rng.normal(size=(3, 3)) + 3.0)
    cases.append(("norm", lambda ls: ad.sum_(ad.norm(ls[0], axis=-1)), [a]))

    a = t(rng.normal(size=(4, 3)) + 3.0)
    w = rng.normal(size=(4, 3))
    cases.append(
        ("normalize", lambda ls, w=w: ad.sum_(ad.mul(ad.normalize(ls[0]), ad.Tensor(w))), [a])
    )

    a = t(rng.normal(size=(2, 3)))
    b = t(rng.normal(size=(4, 3)))
    cases.append(("concat", lambda ls: ad.sum_(ad.mul(ad.concat(ls, axis=0), ad.concat(ls, axis=0))), [a, b]))

    a = t(rng.normal(size=(6,)))
    cases.append(("reshape", lambda ls: ad.sum_(ad.mul(ad.reshape(ls[0], (2, 3)), ad.reshape(ls[0], (2, 3)))), [a]))

    a = t(rng.normal(size=(3, 4)))
    w = rng.normal(size=(4, 3))
    cases.append(("transpose", lambda ls, w=w: ad.sum_(ad.mul(ad.transpose(ls[0]), ad.Tensor(w))), [a]))

    a = t(rng.normal(size=(5, 4)))
    cases.append(("getitem", lambda ls: ad.sum_(ad.mul(ls[0][1:4, :2], ls[0][1:4, :2])), [a]))

    a = t(rng.normal(size=(4, 3)))
    b = t(rng.normal(size=(4, 3)))
    w = rng.normal(size=(4, 3))
    cases.append(
        ("cross3", lambda ls, w=w: ad.sum_(ad.mul(ad.cross3(ls[0], ls[1]), ad.Tensor(w))), [a, b])
    )

    a_raw = rng.uniform(-2.0, 2.0, size=(4, 4))
    # keep samples away from the clamp kinks at +-1
    a_raw[np.abs(np.abs(a_raw) - 1.0) < 1e-2] = 1.5
    a = t(a_raw)
    cases.append(("clamp", lambda ls: ad.sum_(ad.mul(ad.clamp(ls[0], -1.0, 1.0), ad.clamp(ls[0], -1.0, 1.0))), [a]))

    # magnitudes chosen so every pairwise sum stays >= 0.15 from relu's kink
    qa = t(away_from_kinks(rng, (5, 8), margin=0.5))
    qb_mag = rng.uniform(0.1, 0.35, size=(4, 8))
    qb = t(qb_mag * np.where(rng.random((4, 8)) < 0.5, -1.0, 1.0))
    qz = t(rng.normal(size=(4, 8)))
    w = rng.normal(size=(4, 5))
    cases.append(
        (
            "pairwise_scores",
            lambda ls, w=w: ad.sum_(ad.mul(ad.pairwise_scores(ls[0], ls[1], ls[2]), ad.Tensor(w))),
            [qa, qb, qz],
        )
    )

    return cases
