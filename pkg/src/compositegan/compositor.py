"""Differentiable alpha-blend compositing of RGBA layer stacks.

Layers carry non-premultiplied RGBA in [0,1]. Blending is done exactly as
written in the update rules (no internal clamping), so outputs stay in range
by construction and gradients are exact. All functions are pure and safe to
call concurrently.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch

from .errors import RangeError, ShapeError


def _require_unit_range(t: torch.Tensor, name: str) -> None:
    ok = bool(((t >= 0.0) & (t <= 1.0)).all())
    if not ok:
        lo = float(t.min()) if t.numel() else float("nan")
        hi = float(t.max()) if t.numel() else float("nan")
        raise RangeError(f"{name} values must lie in [0,1], got range [{lo}, {hi}]")


@dataclass(frozen=True)
class LayerImage:
    """One translucent layer: rgb of shape (B,3,H,W) and alpha of shape (B,1,H,W)."""

    rgb: torch.Tensor
    alpha: torch.Tensor

    def __post_init__(self):
        if self.rgb.dim() != 4 or self.rgb.shape[1] != 3:
            raise ShapeError(f"layer rgb must have shape (B,3,H,W), got {tuple(self.rgb.shape)}")
        if self.alpha.dim() != 4 or self.alpha.shape[1] != 1:
            raise ShapeError(f"layer alpha must have shape (B,1,H,W), got {tuple(self.alpha.shape)}")
        if (self.rgb.shape[0],) + self.rgb.shape[2:] != (self.alpha.shape[0],) + self.alpha.shape[2:]:
            raise ShapeError(
                f"rgb {tuple(self.rgb.shape)} and alpha {tuple(self.alpha.shape)} extents differ"
            )
        _require_unit_range(self.rgb, "layer rgb")
        _require_unit_range(self.alpha, "layer alpha")

    @property
    def batch(self) -> int:
        return self.rgb.shape[0]

    @property
    def height(self) -> int:
        return self.rgb.shape[2]

    @property
    def width(self) -> int:
        return self.rgb.shape[3]


@dataclass(frozen=True)
class Composite:
    """An opaque RGB image batch of shape (B,3,H,W); implicit alpha is 1 everywhere."""

    rgb: torch.Tensor

    def __post_init__(self):
        if self.rgb.dim() != 4 or self.rgb.shape[1] != 3:
            raise ShapeError(f"composite rgb must have shape (B,3,H,W), got {tuple(self.rgb.shape)}")
        _require_unit_range(self.rgb, "composite rgb")

    @property
    def batch(self) -> int:
        return self.rgb.shape[0]


def _require_same_extent(a, b) -> None:
    if a.rgb.shape[0] != b.rgb.shape[0] or a.rgb.shape[2:] != b.rgb.shape[2:]:
        raise ShapeError(
            f"operands have different extents: {tuple(a.rgb.shape)} vs {tuple(b.rgb.shape)}"
        )


def blend_translucent(back: LayerImage, front: LayerImage) -> LayerImage:
    """Blend a translucent layer over a translucent one.

    new_rgb = back_rgb * back_a * (1 - front_a) + front_rgb * front_a,
    and the result is treated as opaque (alpha identically 1).
    """
    _require_same_extent(back, front)
    rgb = back.rgb * back.alpha * (1.0 - front.alpha) + front.rgb * front.alpha
    return LayerImage(rgb=rgb, alpha=torch.ones_like(front.alpha))


def compose_first(first: LayerImage) -> Composite:
    """Place the bottom layer over the implicit black background: rgb * alpha."""
    return Composite(rgb=first.rgb * first.alpha)


def blend_step(base: Composite, layer: LayerImage) -> Composite:
    """Blend a translucent layer over an opaque composite.

    Per-pixel convex combination: base_rgb * (1 - a) + layer_rgb * a.
    """
    if base.rgb.shape[0] != layer.rgb.shape[0] or base.rgb.shape[2:] != layer.rgb.shape[2:]:
        raise ShapeError(
            f"operands have different extents: {tuple(base.rgb.shape)} vs {tuple(layer.rgb.shape)}"
        )
    rgb = base.rgb * (1.0 - layer.alpha) + layer.rgb * layer.alpha
    return Composite(rgb=rgb)


def compose_stack(layers: list[LayerImage]) -> tuple[Composite, list[Composite]]:
    """Blend a bottom-first stack of layers into one opaque image.

    Returns the final composite and the list of all n intermediate composites
    (the last intermediate is the final image), so callers can export the
    stage-by-stage decomposition.
    """
    layers = list(layers)
    if not layers:
        raise ValueError("compose_stack needs at least one layer")
    out = compose_first(layers[0])
    intermediates = [out]
    for layer in layers[1:]:
        out = blend_step(out, layer)
        intermediates.append(out)
    return out, intermediates
