"""Dataset ingestion: image directories and the synthetic layered-scene recipe.

Loaded images always come out as (N,3,R,R) float64 in [0,1]. Downscaling is
area-averaging (box filter on float data), images with an alpha channel are
flattened over white first, and ordering is a pure function of the shuffle
seed.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .compositor import LayerImage, compose_stack

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".gif", ".tif", ".tiff", ".webp"}


@dataclass(frozen=True)
class DatasetSpec:
    """Where training images come from: a directory of files, or "synthetic"."""

    source: str
    resolution: int = 64
    shuffle_seed: int = 0
    synthetic_count: int = 2000
    synthetic_layers: int = 2

    def __post_init__(self):
        if self.resolution < 1:
            raise ValueError(f"resolution must be >= 1, got {self.resolution}")
        if self.synthetic_count < 1 or self.synthetic_layers < 1:
            raise ValueError("synthetic_count and synthetic_layers must be >= 1")


class ImageDataset:
    """An in-memory image collection with deterministic indexing."""

    def __init__(self, images: torch.Tensor):
        if images.dim() != 4 or images.shape[1] != 3:
            raise ValueError(f"expected (N,3,H,W) images, got {tuple(images.shape)}")
        self.images = images

    def __len__(self) -> int:
        return self.images.shape[0]

    def __getitem__(self, index: int) -> torch.Tensor:
        return self.images[index]

    def select(self, indices: torch.Tensor) -> torch.Tensor:
        return self.images[indices]


def area_resize(img: torch.Tensor, resolution: int) -> torch.Tensor:
    """Antialiased resize of a (3,H,W) [0,1] image via per-channel box filtering."""
    if img.shape[1] == resolution and img.shape[2] == resolution:
        return img.clone()
    channels = []
    for c in range(3):
        plane = Image.fromarray(img[c].numpy().astype(np.float32), mode="F")
        plane = plane.resize((resolution, resolution), Image.Resampling.BOX)
        channels.append(torch.from_numpy(np.asarray(plane, dtype=np.float64)))
    return torch.stack(channels)


def load_image_file(path: str | Path, resolution: int) -> torch.Tensor:
    """Load one image file: flatten any alpha over white, then area-resize."""
    try:
        with Image.open(path) as img:
            arr = np.asarray(img.convert("RGBA"), dtype=np.float64) / 255.0
    except Exception as exc:
        raise ValueError(f"unreadable image file: {path}") from exc
    rgb = torch.from_numpy(np.moveaxis(arr[..., :3], 2, 0))
    alpha = torch.from_numpy(arr[..., 3])[None]
    flat = rgb * alpha + (1.0 - alpha)  # over white
    return area_resize(flat, resolution)


def load_dataset(spec: DatasetSpec) -> ImageDataset:
    """Materialize the dataset that `spec` describes.

    Directory sources are read in name order, then shuffled with
    `spec.shuffle_seed`; the synthetic source generates scenes from the
    derived recipe. Either way the result is a pure function of `spec`.
    """
    if spec.source == "synthetic":
        recipe = SyntheticRecipe(
            resolution=spec.resolution,
            layer_count=spec.synthetic_layers,
            seed=spec.shuffle_seed,
        )
        images, _ = make_synthetic(recipe, spec.synthetic_count)
        return ImageDataset(images)
    root = Path(spec.source)
    if not root.is_dir():
        raise ValueError(f"dataset source is not a directory: {root}")
    files = sorted(p for p in root.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        raise ValueError(f"no usable images in {root}")
    images = torch.stack([load_image_file(p, spec.resolution) for p in files])
    g = torch.Generator()
    g.manual_seed(spec.shuffle_seed)
    order = torch.randperm(len(files), generator=g)
    return ImageDataset(images[order])


@dataclass(frozen=True)
class SyntheticRecipe:
    """Layered scenes: a background plus simple colored shapes, one per layer.

    Emits both the flattened RGB image and the ground-truth RGBA stack whose
    composition reproduces it exactly.
    """

    layer_count: int = 2
    resolution: int = 32
    background_palette: tuple[tuple[float, float, float], ...] = (
        (0.92, 0.91, 0.86),
        (0.25, 0.35, 0.55),
        (0.55, 0.72, 0.88),
        (0.83, 0.72, 0.58),
        (0.35, 0.52, 0.35),
        (0.62, 0.42, 0.55),
    )
    shapes: tuple[str, ...] = ("circle", "triangle", "rectangle")
    position_range: tuple[float, float] = (0.2, 0.8)
    scale_range: tuple[float, float] = (0.18, 0.42)
    color_range: tuple[float, float] = (0.05, 0.95)
    seed: int = 0

    def __post_init__(self):
        if self.layer_count < 1:
            raise ValueError(f"layer_count must be >= 1, got {self.layer_count}")
        if self.resolution < 4:
            raise ValueError(f"resolution must be >= 4, got {self.resolution}")
        if not self.shapes:
            raise ValueError("shape vocabulary is empty")


def _uniform(g: torch.Generator, lo: float, hi: float, *shape) -> torch.Tensor:
    return lo + (hi - lo) * torch.rand(*shape, generator=g, dtype=torch.float64)


def _shape_mask(
    kind: str, cx: float, cy: float, scale: float, resolution: int
) -> torch.Tensor:
    """Binary (H,W) coverage mask of one shape, coordinates in [0,1] units."""
    coords = (torch.arange(resolution, dtype=torch.float64) + 0.5) / resolution
    y = coords[:, None]
    x = coords[None, :]
    if kind == "circle":
        r = scale / 2.0
        inside = (x - cx) ** 2 + (y - cy) ** 2 <= r * r
    elif kind == "rectangle":
        inside = (torch.abs(x - cx) <= scale / 2.0) & (torch.abs(y - cy) <= scale * 0.35)
    elif kind == "triangle":
        # upright isosceles triangle inscribed in the scale box
        top = (cx, cy - scale / 2.0)
        left = (cx - scale / 2.0, cy + scale / 2.0)
        right = (cx + scale / 2.0, cy + scale / 2.0)

        def edge(p, q):
            return (q[0] - p[0]) * (y - p[1]) - (q[1] - p[1]) * (x - p[0])

        inside = (edge(top, left) >= 0) & (edge(left, right) >= 0) & (edge(right, top) >= 0)
    else:
        raise ValueError(f"unknown shape kind '{kind}'")
    return inside.to(torch.float64)


def make_synthetic(
    recipe: SyntheticRecipe, count: int
) -> tuple[torch.Tensor, torch.Tensor]:
    """Generate `count` scenes.

    Returns (images, stacks): images (N,3,R,R) and ground-truth layers
    (N,k,4,R,R) ordered background-first, with images equal to the alpha
    composition of the stacks.
    """
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    g = torch.Generator()
    g.manual_seed(recipe.seed)
    r = recipe.resolution
    k = recipe.layer_count
    palette = torch.tensor(recipe.background_palette, dtype=torch.float64)
    stacks = torch.zeros(count, k, 4, r, r, dtype=torch.float64)

    for i in range(count):
        # background: vertical gradient between two palette colors, alpha 1
        pick = torch.randint(0, palette.shape[0], (2,), generator=g)
        c_top, c_bot = palette[pick[0]], palette[pick[1]]
        ramp = torch.linspace(0.0, 1.0, r, dtype=torch.float64)[:, None]
        bg = c_top[:, None, None] * (1.0 - ramp) + c_bot[:, None, None] * ramp
        stacks[i, 0, :3] = bg
        stacks[i, 0, 3] = 1.0
        for layer in range(1, k):
            kind = recipe.shapes[int(torch.randint(0, len(recipe.shapes), (1,), generator=g))]
            cx = float(_uniform(g, *recipe.position_range, 1))
            cy = float(_uniform(g, *recipe.position_range, 1))
            scale = float(_uniform(g, *recipe.scale_range, 1))
            color = _uniform(g, *recipe.color_range, 3)
            stacks[i, layer, :3] = color[:, None, None].expand(3, r, r)
            stacks[i, layer, 3] = _shape_mask(kind, cx, cy, scale, r)

    layers = [
        LayerImage(rgb=stacks[:, t, :3], alpha=stacks[:, t, 3:4]) for t in range(k)
    ]
    final, _ = compose_stack(layers)
    return final.rgb, stacks
