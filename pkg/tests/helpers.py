"""Oracles and scaffolding shared across test modules.

The finite-difference gradient checker and the hand-rolled AdamW reference
are written independently of the library code paths they verify: they use
plain numpy and the mathematical definitions only.
"""

import numpy as np

from liftlab import numcore as nc


def fd_grads(loss_fn, tensors, rel_h=1e-5):
    """Central finite differences of a scalar closure w.r.t. each tensor.

    Perturbs tensor data in place (restoring it), evaluating loss_fn()
    twice per coordinate. Step size scales with the coordinate magnitude.
    """
    grads = []
    for t in tensors:
        flat = t.data.reshape(-1)
        g = np.zeros(flat.size, dtype=np.float64)
        for i in range(flat.size):
            orig = flat[i]
            h = rel_h * max(1.0, abs(float(orig)))
            flat[i] = orig + h
            lp = loss_fn()
            flat[i] = orig - h
            lm = loss_fn()
            flat[i] = orig
            g[i] = (lp - lm) / (2.0 * h)
        grads.append(g.reshape(t.data.shape))
    return grads


def max_rel_err(analytic, reference):
    """Max elementwise relative error, floored against the gradient scale
    so near-zero coordinates are compared in scaled-absolute terms."""
    a = np.concatenate([np.asarray(x, dtype=np.float64).ravel() for x in analytic])
    r = np.concatenate([np.asarray(x, dtype=np.float64).ravel() for x in reference])
    scale = max(float(np.max(np.abs(r))), 1e-12)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(r)), 1e-2 * scale)
    return float(np.max(np.abs(a - r) / denom))


def reference_adamw(param, grads, lr, wd, beta1, beta2, eps):
    """Textbook decoupled-weight-decay Adam, step by step, in float64."""
    p = np.asarray(param, dtype=np.float64).copy()
    m = np.zeros_like(p)
    v = np.zeros_like(p)
    for t, g in enumerate(grads, start=1):
        g = np.asarray(g, dtype=np.float64)
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        p = p - lr * wd * p
        mhat = m / (1 - beta1 ** t)
        vhat = v / (1 - beta2 ** t)
        p = p - lr * mhat / (np.sqrt(vhat) + eps)
    return p


def zero_output_projection(model):
    """Make next-token logits exactly uniform regardless of input."""
    model.params["out_proj"].data[:] = 0.0
    return model


def train_lm(model, tokens, steps, lr):
    """Tiny plain loop: full-batch AdamW on one sequence's lm_loss."""
    from liftlab.model import lm_loss

    opt = nc.AdamW(model.params, nc.OptimHyper(learning_rate=lr))
    losses = []
    for _ in range(steps):
        opt.zero_grad()
        loss = lm_loss(model, tokens)
        losses.append(loss.item())
        nc.backward(loss)
        nc.clip_grad_norm_(model.params.values(), opt.hyper.max_grad_norm)
        opt.step()
    return losses


def _as_arrays(obj):
    """Normalize a Model, dict of Tensors, or dict of arrays to raw arrays."""
    params = obj.params if hasattr(obj, "params") else obj
    return {k: (v.data if hasattr(v, "data") else v) for k, v in params.items()}


def params_snapshot(model):
    return {k: a.copy() for k, a in _as_arrays(model).items()}


def params_equal(a, b):
    """Bit-for-bit equality across two named parameter snapshots."""
    a, b = _as_arrays(a), _as_arrays(b)
    if set(a) != set(b):
        return False
    return all(np.array_equal(a[k], b[k]) for k in a)
