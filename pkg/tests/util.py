"""Shared test helpers: independent oracles and finite-difference checking.

The oracles here are deliberately written as plain scalar loops so they stay
independent of the vectorized implementations they check.
"""
from __future__ import annotations

import numpy as np
import torch


def compose_stack_oracle(rgbs: list[np.ndarray], alphas: list[np.ndarray]) -> list[np.ndarray]:
    """Scalar triple-loop blending of a layer stack.

    rgbs: list of (B,3,H,W); alphas: list of (B,1,H,W). Returns all n
    intermediate composites, bottom-up.
    """
    n = len(rgbs)
    batch, _, height, width = rgbs[0].shape
    out = np.zeros((batch, 3, height, width))
    results = []
    for b in range(batch):
        for c in range(3):
            for i in range(height):
                for j in range(width):
                    out[b, c, i, j] = rgbs[0][b, c, i, j] * alphas[0][b, 0, i, j]
    results.append(out.copy())
    for t in range(1, n):
        nxt = np.zeros_like(out)
        for b in range(batch):
            for c in range(3):
                for i in range(height):
                    for j in range(width):
                        a = alphas[t][b, 0, i, j]
                        nxt[b, c, i, j] = out[b, c, i, j] * (1.0 - a) + rgbs[t][b, c, i, j] * a
        out = nxt
        results.append(out.copy())
    return results


def ssim_oracle(a: np.ndarray, b: np.ndarray, params) -> float:
    """Direct per-window SSIM: explicit loop over all valid window positions."""
    win = params.window
    half = (win - 1) // 2
    xs = np.arange(-half, half + 1, dtype=np.float64)
    w1 = np.exp(-(xs * xs) / (2.0 * params.window_stddev**2))
    w1 /= w1.sum()
    w2 = np.outer(w1, w1)
    c1 = (params.k1 * params.dynamic_range) ** 2
    c2 = (params.k2 * params.dynamic_range) ** 2
    h, w = a.shape
    vals = []
    for i in range(h - win + 1):
        for j in range(w - win + 1):
            wa = a[i : i + win, j : j + win]
            wb = b[i : i + win, j : j + win]
            mu_a = float((w2 * wa).sum())
            mu_b = float((w2 * wb).sum())
            var_a = float((w2 * wa * wa).sum()) - mu_a * mu_a
            var_b = float((w2 * wb * wb).sum()) - mu_b * mu_b
            cov = float((w2 * wa * wb).sum()) - mu_a * mu_b
            num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
            den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
            vals.append(num / den)
    return float(np.mean(vals))


def central_difference(f, tensor: torch.Tensor, flat_index: int, h: float) -> float:
    """Central finite difference of scalar f() wrt one coordinate of `tensor`."""
    flat = tensor.data.view(-1)
    orig = flat[flat_index].item()
    flat[flat_index] = orig + h
    f_plus = float(f())
    flat[flat_index] = orig - h
    f_minus = float(f())
    flat[flat_index] = orig
    return (f_plus - f_minus) / (2.0 * h)


def relative_error(fd: float, ad: float, floor: float = 1e-8) -> float:
    denom = max(abs(fd), abs(ad))
    if denom < floor:
        return 0.0
    return abs(fd - ad) / denom


def fd_check_tensor(
    f, tensor: torch.Tensor, *, h: float = 1e-5, rtol: float = 1e-3, coords=None, rng=None
) -> float:
    """Compare autograd gradients of scalar f() against central differences.

    Checks either every coordinate of `tensor` or a random sample of `coords`
    of them. Returns the worst relative error seen, asserting it stays under
    rtol.
    """
    tensor.grad = None
    value = f()
    value.backward()
    grad = tensor.grad.detach().clone().view(-1)
    total = tensor.numel()
    if coords is None:
        picks = range(total)
    else:
        gen = rng or np.random.default_rng(0)
        picks = gen.choice(total, size=min(coords, total), replace=False)
    worst = 0.0
    with torch.no_grad():
        for idx in picks:
            fd = central_difference(lambda: f().detach(), tensor, int(idx), h)
            err = relative_error(fd, float(grad[int(idx)]))
            worst = max(worst, err)
    assert worst < rtol, f"finite-difference mismatch: worst rel err {worst:.3e} >= {rtol}"
    return worst


def fd_check_params(
    f, params: list[torch.Tensor], *, h: float = 1e-5, rtol: float = 1e-3, coords: int = 50, seed: int = 0
) -> float:
    """Finite-difference check of scalar f() against >= `coords` random
    parameter coordinates spread across `params`."""
    for p in params:
        p.grad = None
    value = f()
    value.backward()
    grads = [p.grad.detach().clone().view(-1) for p in params]
    sizes = np.array([p.numel() for p in params])
    total = int(sizes.sum())
    gen = np.random.default_rng(seed)
    picks = gen.choice(total, size=min(coords, total), replace=False)
    bounds = np.cumsum(sizes)
    worst = 0.0
    with torch.no_grad():
        for flat in picks:
            which = int(np.searchsorted(bounds, flat, side="right"))
            inner = int(flat - (bounds[which - 1] if which else 0))
            fd = central_difference(lambda: f().detach(), params[which], inner, h)
            err = relative_error(fd, float(grads[which][inner]))
            worst = max(worst, err)
    assert worst < rtol, f"finite-difference mismatch: worst rel err {worst:.3e} >= {rtol}"
    return worst
