"""Shared test utilities: finite-difference gradient checks."""

import numpy as np
import torch


def fd_gradient_check(loss_fn, params, rel_tol, n_coords=6, h=1e-5, abs_floor=1e-10):
    """Compare analytic gradients of loss_fn() against central differences.

    loss_fn must rebuild the graph on every call (pure function of `params`).
    For each parameter tensor, the n_coords largest-|grad| coordinates are
    probed; each must satisfy |analytic - fd| <= rel_tol * max(|analytic|,
    |fd|) + abs_floor. Returns the worst relative error seen.
    """
    for p in params:
        p.grad = None
    loss = loss_fn()
    loss.backward()
    worst = 0.0
    for p in params:
        assert p.grad is not None, "parameter received no gradient"
        grad = p.grad.detach().clone().reshape(-1)
        flat = p.data.reshape(-1)
        order = torch.argsort(grad.abs(), descending=True)
        for idx in order[:n_coords].tolist():
            step = h * max(1.0, float(flat[idx].abs()))
            orig = float(flat[idx])
            flat[idx] = orig + step
            with torch.no_grad():
                f_plus = float(loss_fn())
            flat[idx] = orig - step
            with torch.no_grad():
                f_minus = float(loss_fn())
            flat[idx] = orig
            fd = (f_plus - f_minus) / (2.0 * step)
            a = float(grad[idx])
            err = abs(a - fd)
            scale = max(abs(a), abs(fd))
            assert err <= rel_tol * scale + abs_floor, (
                f"gradient mismatch: analytic={a:.6e} fd={fd:.6e} "
                f"rel={err / max(scale, 1e-30):.3e}")
            if scale > 0:
                worst = max(worst, err / scale)
    return worst


def fd_input_gradient(fn, x, h):
    """Central-difference gradient of scalar fn w.r.t. every coordinate of x."""
    x = x.detach().clone()
    out = torch.zeros_like(x)
    flat = x.reshape(-1)
    g = out.reshape(-1)
    for i in range(flat.numel()):
        orig = float(flat[i])
        flat[i] = orig + h
        with torch.no_grad():
            f_plus = float(fn(x))
        flat[i] = orig - h
        with torch.no_grad():
            f_minus = float(fn(x))
        flat[i] = orig
        g[i] = (f_plus - f_minus) / (2.0 * h)
    return out


def seeded_rng(seed):
    return np.random.default_rng(seed)
