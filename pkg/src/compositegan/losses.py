"""Scalar training objectives: adversarial, variational, and alpha-budget terms.

Batch conventions: the adversarial and alpha losses reduce to a scalar over
the whole batch (sums, not means). The variational building blocks keep a
per-item shape when given batched input so `vae_loss` can combine them; on
single items they return scalars. Everything is pure torch and thread-safe.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch

from .compositor import LayerImage
from .errors import ShapeError

PROB_EPS = 1e-7  # keeps log() finite when a discriminator output saturates


@dataclass(frozen=True)
class AlphaLossConfig:
    """Budget `u` for the sum of one layer's alpha map, and the loss multiplier."""

    budget: float
    weight: float = 1.0

    def __post_init__(self):
        if self.budget < 0:
            raise ValueError(f"alpha budget must be nonnegative, got {self.budget}")
        if self.weight < 0:
            raise ValueError(f"alpha loss weight must be nonnegative, got {self.weight}")


def gan_loss(d_real: torch.Tensor, d_fake: torch.Tensor) -> torch.Tensor:
    """Adversarial objective: sum of log d_real + log(1 - d_fake) over the batch.

    The discriminator ascends this value; generators descend it. Probabilities
    are clamped away from {0,1} by PROB_EPS so saturation cannot produce -inf.
    """
    if d_real.shape != d_fake.shape:
        raise ShapeError(f"batch sizes differ: {tuple(d_real.shape)} vs {tuple(d_fake.shape)}")
    real = torch.log(d_real.clamp(PROB_EPS, 1.0 - PROB_EPS))
    fake = torch.log((1.0 - d_fake).clamp(PROB_EPS, 1.0 - PROB_EPS))
    return real.sum() + fake.sum()


def generator_gan_loss(d_fake: torch.Tensor, nonsaturating: bool = False) -> torch.Tensor:
    """The generator-side objective to minimize, from fake-batch probabilities.

    Default is the literal saturating form sum log(1 - d_fake); the
    non-saturating alternative minimizes -sum log d_fake instead.
    """
    if nonsaturating:
        return -torch.log(d_fake.clamp(PROB_EPS, 1.0 - PROB_EPS)).sum()
    return torch.log((1.0 - d_fake).clamp(PROB_EPS, 1.0 - PROB_EPS)).sum()


def kl_term(mu: torch.Tensor, logvar: torch.Tensor) -> torch.Tensor:
    """KL divergence of N(mu, diag exp(logvar)) from the standard normal prior.

    Sums over the latent dimension (last axis): 0.5 * sum(mu^2 + e^logvar - 1 - logvar).
    Shape (K,) -> scalar; (B,K) -> (B,).
    """
    if mu.shape != logvar.shape:
        raise ShapeError(f"mu {tuple(mu.shape)} and logvar {tuple(logvar.shape)} differ")
    return 0.5 * (mu * mu + torch.exp(logvar) - 1.0 - logvar).sum(dim=-1)


def recon_pixel(x: torch.Tensor, xhat: torch.Tensor) -> torch.Tensor:
    """Pixel log-likelihood under a unit-variance Gaussian, constants dropped.

    Returns -(1/2) * sum of squared differences over channel and spatial dims;
    per-item vector for (B,3,H,W) inputs, scalar for a single (3,H,W) image.
    """
    if x.shape != xhat.shape:
        raise ShapeError(f"image shapes differ: {tuple(x.shape)} vs {tuple(xhat.shape)}")
    diff = x - xhat
    if diff.dim() == 4:
        return -0.5 * (diff * diff).sum(dim=(1, 2, 3))
    return -0.5 * (diff * diff).sum()


def recon_feature(feat_x: torch.Tensor, feat_xhat: torch.Tensor) -> torch.Tensor:
    """Feature-space log-likelihood with unit covariance, constants dropped.

    -(1/2) * squared distance over the feature axis (last dim).
    """
    if feat_x.shape != feat_xhat.shape:
        raise ShapeError(
            f"feature shapes differ: {tuple(feat_x.shape)} vs {tuple(feat_xhat.shape)}"
        )
    diff = feat_x - feat_xhat
    return -0.5 * (diff * diff).sum(dim=-1)


def vae_loss(
    kl: torch.Tensor, pixel_ll: torch.Tensor, feature_ll: torch.Tensor
) -> torch.Tensor:
    """Combine per-item terms into the minimized variational objective.

    sum_i kl_i - pixel_ll_i - feature_ll_i over the minibatch.
    """
    return (kl - pixel_ll - feature_ll).sum()


def alpha_loss(layer: LayerImage | torch.Tensor, cfg: AlphaLossConfig) -> torch.Tensor:
    """Alpha-budget loss of one layer: |u - sum(alpha)| - sum((alpha - 0.5)^2).

    The first term ties each image's total opacity to the budget u; the second
    rewards alpha values near 0 or 1. Applied per image and summed over the
    batch. Accepts a LayerImage or a bare alpha map ((H,W), (B,H,W) or
    (B,1,H,W)).
    """
    alpha = layer.alpha if isinstance(layer, LayerImage) else layer
    if alpha.dim() == 2:
        alpha = alpha[None]
    flat = alpha.reshape(alpha.shape[0], -1)
    total = flat.sum(dim=1)
    centered = flat - 0.5
    per_item = torch.abs(cfg.budget - total) - (centered * centered).sum(dim=1)
    return per_item.sum()


def alpha_budget_deviation(layer: LayerImage | torch.Tensor, budget: float) -> float:
    """Mean over the batch of |u - sum(alpha)|, as a diagnostic."""
    alpha = layer.alpha if isinstance(layer, LayerImage) else layer
    alpha = alpha.detach()
    if alpha.dim() == 2:
        alpha = alpha[None]
    total = alpha.reshape(alpha.shape[0], -1).sum(dim=1)
    return float(torch.abs(budget - total).mean())


@dataclass
class LossReport:
    """Named scalar losses of one training iteration, plus per-generator values."""

    iteration: int
    gan: float
    generator_gan: tuple[float, ...]
    generator_alpha: tuple[float, ...] | None = None
    generator_alpha_dev: tuple[float, ...] | None = None
    alpha: float | None = None
    vae_kl: float | None = None
    vae_pixel: float | None = None
    vae_feature: float | None = None

    def fields(self) -> dict[str, float]:
        """Flatten to named scalars, per-generator entries as g{i}_* (1-based)."""
        out: dict[str, float] = {"iteration": float(self.iteration), "gan": self.gan}
        for i, v in enumerate(self.generator_gan):
            out[f"g{i + 1}_gan"] = v
        if self.generator_alpha is not None:
            for i, v in enumerate(self.generator_alpha):
                out[f"g{i + 1}_alpha"] = v
        if self.generator_alpha_dev is not None:
            for i, v in enumerate(self.generator_alpha_dev):
                out[f"g{i + 1}_alpha_dev"] = v
        for name in ("alpha", "vae_kl", "vae_pixel", "vae_feature"):
            v = getattr(self, name)
            if v is not None:
                out[name] = v
        return out

    @classmethod
    def from_fields(cls, d: dict[str, float]) -> "LossReport":
        gen_gan, gen_alpha, gen_dev = [], [], []
        i = 1
        while f"g{i}_gan" in d:
            gen_gan.append(d[f"g{i}_gan"])
            if f"g{i}_alpha" in d:
                gen_alpha.append(d[f"g{i}_alpha"])
            if f"g{i}_alpha_dev" in d:
                gen_dev.append(d[f"g{i}_alpha_dev"])
            i += 1
        return cls(
            iteration=int(d["iteration"]),
            gan=d["gan"],
            generator_gan=tuple(gen_gan),
            generator_alpha=tuple(gen_alpha) if gen_alpha else None,
            generator_alpha_dev=tuple(gen_dev) if gen_dev else None,
            alpha=d.get("alpha"),
            vae_kl=d.get("vae_kl"),
            vae_pixel=d.get("vae_pixel"),
            vae_feature=d.get("vae_feature"),
        )

    def log_line(self) -> str:
        """One line for the training log: iteration index then named scalars."""
        parts = [f"iter={self.iteration}"]
        for k, v in self.fields().items():
            if k != "iteration":
                parts.append(f"{k}={v:.6g}")
        return " ".join(parts)

    def finite(self) -> bool:
        return all(math.isfinite(v) for v in self.fields().values())
