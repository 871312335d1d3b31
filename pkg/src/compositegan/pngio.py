"""8-bit PNG import/export and preview rendering.

Values are [0,1] floats inside the package and 8-bit channels on disk,
mapped linearly. All writes are atomic (temp file in the target directory,
then rename).
"""
from __future__ import annotations

import io
import os
import tempfile
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .compositor import LayerImage
from .errors import ShapeError


def to_uint8(x: torch.Tensor | np.ndarray) -> np.ndarray:
    arr = x.detach().cpu().numpy() if isinstance(x, torch.Tensor) else np.asarray(x)
    return np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)


def from_uint8(arr: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(arr.astype(np.float64) / 255.0)


def quantize_unit(x: torch.Tensor) -> torch.Tensor:
    """Snap [0,1] values to the 8-bit grid they will occupy on disk."""
    return torch.round(x * 255.0) / 255.0


def write_bytes_atomic(path: str | Path, data: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _encode_png(img: Image.Image) -> bytes:
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def save_rgb_png(path: str | Path, rgb: torch.Tensor | np.ndarray) -> None:
    """Write a (3,H,W) [0,1] image as an opaque 8-bit PNG."""
    arr = to_uint8(rgb)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ShapeError(f"expected (3,H,W) image, got {arr.shape}")
    img = Image.fromarray(np.moveaxis(arr, 0, 2), mode="RGB")
    write_bytes_atomic(path, _encode_png(img))


def load_rgb_png(path: str | Path) -> torch.Tensor:
    """Read any PIL-readable image as a (3,H,W) float64 tensor in [0,1]."""
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"))
    return from_uint8(np.moveaxis(arr, 2, 0))


def save_rgba_png(
    path: str | Path, rgb: torch.Tensor | np.ndarray, alpha: torch.Tensor | np.ndarray
) -> None:
    """Write one RGBA layer: rgb (3,H,W) plus alpha (H,W) or (1,H,W), in [0,1]."""
    rgb8 = to_uint8(rgb)
    a = alpha
    if isinstance(a, torch.Tensor):
        a = a.detach().cpu().numpy()
    a = np.asarray(a)
    if a.ndim == 3 and a.shape[0] == 1:
        a = a[0]
    if rgb8.ndim != 3 or rgb8.shape[0] != 3 or a.shape != rgb8.shape[1:]:
        raise ShapeError(f"rgb {rgb8.shape} / alpha {a.shape} are not a matching RGBA layer")
    a8 = np.clip(np.rint(a * 255.0), 0, 255).astype(np.uint8)
    stacked = np.concatenate([np.moveaxis(rgb8, 0, 2), a8[..., None]], axis=2)
    img = Image.fromarray(stacked, mode="RGBA")
    write_bytes_atomic(path, _encode_png(img))


def load_rgba_png(path: str | Path) -> tuple[torch.Tensor, torch.Tensor]:
    """Read an RGBA PNG as ((3,H,W), (1,H,W)) float64 tensors in [0,1]."""
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGBA"))
    rgb = from_uint8(np.moveaxis(arr[..., :3], 2, 0))
    alpha = from_uint8(arr[..., 3][None])
    return rgb, alpha


def load_layer_png(path: str | Path) -> LayerImage:
    """Read an RGBA PNG as a batch-of-one LayerImage."""
    rgb, alpha = load_rgba_png(path)
    return LayerImage(rgb=rgb[None], alpha=alpha[None])


def checkerboard(
    height: int, width: int, cell: int = 8, light: float = 0.8, dark: float = 0.6
) -> torch.Tensor:
    """The gray preview backdrop rendered under transparent regions, (3,H,W)."""
    ys = torch.arange(height) // cell
    xs = torch.arange(width) // cell
    parity = (ys[:, None] + xs[None, :]) % 2
    plane = torch.where(
        parity == 0,
        torch.tensor(light, dtype=torch.float64),
        torch.tensor(dark, dtype=torch.float64),
    )
    return plane.expand(3, height, width).clone()


def over_checkerboard(rgb: torch.Tensor, alpha: torch.Tensor, cell: int = 8) -> torch.Tensor:
    """Flatten one RGBA layer ((3,H,W), (1,H,W) or (H,W)) over the checkerboard."""
    if alpha.dim() == 2:
        alpha = alpha[None]
    board = checkerboard(rgb.shape[1], rgb.shape[2], cell=cell)
    return board * (1.0 - alpha) + rgb * alpha


def image_grid(
    images: list[torch.Tensor], rows: int, cols: int, pad: int = 2, fill: float = 1.0
) -> torch.Tensor:
    """Arrange (3,H,W) images row-major into one (3,?,?) sheet with padding."""
    if not images:
        raise ValueError("need at least one image")
    if len(images) > rows * cols:
        raise ValueError(f"{len(images)} images do not fit a {rows}x{cols} grid")
    h, w = images[0].shape[1], images[0].shape[2]
    sheet = torch.full(
        (3, rows * h + pad * (rows + 1), cols * w + pad * (cols + 1)),
        fill,
        dtype=torch.float64,
    )
    for idx, img in enumerate(images):
        if img.shape != images[0].shape:
            raise ShapeError("grid images must share one shape")
        r, c = divmod(idx, cols)
        y = pad + r * (h + pad)
        x = pad + c * (w + pad)
        sheet[:, y : y + h, x : x + w] = img
    return sheet
