"""Independent reference implementations used by the test-suite.

Everything here is deliberately naive: explicit loops, math.fsum, dense LPs.
"""

from __future__ import annotations

import math

import numpy as np

from lagan.jet import CENTERS, GRID
from lagan.nn import ops
from lagan.nn.tensor import Tensor


# ----------------------------------------------------------------------------
# finite differences


def fd_gradient(fn, arrays, index, step=1e-5):
    """Central difference of scalar ``fn()`` w.r.t. every entry of ``arrays[index]`` (mutated in place)."""
    a = arrays[index]
    grad = np.zeros_like(a)
    flat = a.reshape(-1)
    gflat = grad.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + step
        up = fn()
        flat[k] = orig - step
        down = fn()
        flat[k] = orig
        gflat[k] = (up - down) / (2 * step)
    return grad


def relative_error(analytic, numeric) -> float:
    """max |a - n| / max(|a|, |n|) over the whole array (0 when both vanish)."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    scale = max(float(np.max(np.abs(a), initial=0.0)), float(np.max(np.abs(n), initial=0.0)))
    if scale == 0.0:
        return 0.0
    return float(np.max(np.abs(a - n))) / scale


def check_op_gradients(op, inputs, rng, step=1e-5):
    """Compare analytic and numeric gradients of sum(op(*inputs) * R) for every input.

    Returns the worst relative error across inputs.
    """
    tensors = [Tensor(x.copy(), requires_grad=True) for x in inputs]
    out = op(*tensors)
    probe = rng.normal(size=out.shape)
    out.backward(probe)
    worst = 0.0
    for k, t in enumerate(tensors):
        arrays = [t2.values for t2 in tensors]

        def scalar():
            return float(np.sum(op(*[Tensor(v) for v in arrays]).values * probe))

        numeric = fd_gradient(scalar, arrays, k, step)
        worst = max(worst, relative_error(t.grad, numeric))
    return worst


# ----------------------------------------------------------------------------
# window layers


def brute_window_count(length, field, stride):
    return len(range(0, length - field + 1, stride))


def brute_conv(x, w, b, stride):
    """Direct nested-loop cross-correlation, NHWC."""
    bsz, length, _, cin = x.shape
    f, _, _, n = w.shape
    out_len = brute_window_count(length, f, stride)
    y = np.zeros((bsz, out_len, out_len, n))
    for i in range(out_len):
        for j in range(out_len):
            patch = x[:, i * stride : i * stride + f, j * stride : j * stride + f, :]
            y[:, i, j, :] = np.tensordot(patch, w, axes=([1, 2, 3], [0, 1, 2]))
    return y + (0 if b is None else b)


def brute_local(x, w, b, stride):
    bsz, length, _, cin = x.shape
    wo, _, f, _, _, n = w.shape
    y = np.zeros((bsz, wo, wo, n))
    for i in range(wo):
        for j in range(wo):
            patch = x[:, i * stride : i * stride + f, j * stride : j * stride + f, :]
            y[:, i, j, :] = np.tensordot(patch, w[i, j], axes=([1, 2, 3], [0, 1, 2]))
    return y + (0 if b is None else b)


# ----------------------------------------------------------------------------
# observables by direct summation


def pt_oracle(pixels) -> float:
    cx = math.fsum(pixels[i, j] * math.cos(CENTERS[j]) for i in range(GRID) for j in range(GRID))
    sy = math.fsum(pixels[i, j] * math.sin(CENTERS[j]) for i in range(GRID) for j in range(GRID))
    return math.sqrt(cx * cx + sy * sy)


def mass_oracle(pixels) -> float:
    e = math.fsum(pixels.ravel())
    cx = math.fsum(pixels[i, j] * math.cos(CENTERS[j]) for i in range(GRID) for j in range(GRID))
    sy = math.fsum(pixels[i, j] * math.sin(CENTERS[j]) for i in range(GRID) for j in range(GRID))
    zs = math.fsum(pixels[i, j] * math.sinh(CENTERS[i]) for i in range(GRID) for j in range(GRID))
    m2 = math.fsum([e * e, -cx * cx, -sy * sy, -zs * zs])
    return math.sqrt(max(m2, 0.0))


def tau_oracle(pixels, axes) -> float:
    num = []
    for i in range(GRID):
        for j in range(GRID):
            if pixels[i, j] == 0:
                continue
            d = min(math.hypot(CENTERS[i] - a[0], CENTERS[j] - a[1]) for a in axes)
            num.append(pixels[i, j] * d)
    return math.fsum(num) / math.fsum(pixels.ravel())


def kt_wta_oracle(pixels, n):
    """Exclusive kt + winner-take-all on a list of particles, one merge at a time."""
    parts = [
        [float(pixels[i, j]), float(CENTERS[i]), float(CENTERS[j]), i * GRID + j]
        for i in range(GRID)
        for j in range(GRID)
        if pixels[i, j] > 0
    ]
    while len(parts) > n:
        best = None
        for a in range(len(parts)):
            for b in range(a + 1, len(parts)):
                pa, pb = parts[a], parts[b]
                d = min(pa[0] ** 2, pb[0] ** 2) * ((pa[1] - pb[1]) ** 2 + (pa[2] - pb[2]) ** 2)
                if best is None or d < best[0]:
                    best = (d, a, b)
        _, a, b = best
        pa, pb = parts[a], parts[b]
        harder = pb if pb[0] > pa[0] else pa
        parts[a] = [pa[0] + pb[0], harder[1], harder[2], pa[3]]
        del parts[b]
    return np.array([[p[1], p[2]] for p in parts])


# ----------------------------------------------------------------------------
# transport


def lp_emd(p, q):
    """EMD by scipy's HiGHS LP on the dense support of ``p`` and ``q``."""
    from scipy.optimize import linprog
    from scipy.sparse import coo_matrix

    src = np.argwhere(p > 0)
    dst = np.argwhere(q > 0)
    cost = np.sqrt(((src[:, None, :] - dst[None, :, :]) ** 2).sum(-1))
    ns, nt = cost.shape
    r = np.repeat(np.arange(ns), nt)
    c = np.tile(np.arange(nt), ns)
    rows = np.concatenate([r, ns + c])
    cols = np.concatenate([np.arange(ns * nt)] * 2)
    a_eq = coo_matrix((np.ones(2 * ns * nt), (rows, cols)), shape=(ns + nt, ns * nt)).tocsr()
    b_eq = np.concatenate([p[tuple(src.T)], q[tuple(dst.T)]])
    res = linprog(cost.ravel(), A_eq=a_eq, b_eq=b_eq, bounds=(0, None), method="highs",
                  options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10})
    assert res.status == 0, res.message
    return float(res.fun)


def random_pmf(rng, n, density=0.4):
    x = rng.random((n, n)) * (rng.random((n, n)) < density)
    x[rng.integers(n), rng.integers(n)] += 0.1
    return x / x.sum()


# ----------------------------------------------------------------------------
# end-to-end LAGAN loss


def lagan_loss_gradcheck(params, z, classes, targets, step=1e-5):
    """Relative error of d(loss)/d(theta) for every trainable array of a LAGAN.

    loss = BCE(D_real(G(z)), targets) + BCE(D_aux(G(z)), classes), both heads
    in train-mode batch norm with frozen running statistics.

    Freshly initialised biases are zero, and ReLU outputs contain exact
    zeros, so some pre-activations would sit exactly on the leaky-ReLU kink
    where finite differences see the average of two slopes.  The caller
    should jitter biases first (see :func:`jitter_biases`).
    """
    from lagan.model import discriminator_forward, generator_forward

    def loss_tensor():
        fake = generator_forward(params, Tensor(z), classes, training=True, update_stats=False)
        r, a = discriminator_forward(params, fake, training=True, update_stats=False)
        return ops.add(ops.sigmoid_bce_with_logits(r, targets), ops.sigmoid_bce_with_logits(a, classes))

    for t in params.tensors.values():
        t.grad = None
    loss_tensor().backward()
    worst = {}
    for name, t in params.tensors.items():
        arrays = [t.values]
        numeric = fd_gradient(lambda: loss_tensor().values.item(), arrays, 0, step)
        analytic = t.grad if t.grad is not None else np.zeros_like(t.values)
        worst[name] = relative_error(analytic, numeric)
    return worst


def jitter_biases(params, rng, scale=0.1):
    """Move every bias off zero so no pre-activation sits on an activation kink."""
    for name, t in params.tensors.items():
        if name.endswith(".b") or name.endswith(".beta"):
            t.values += rng.normal(0.0, scale, size=t.shape)
