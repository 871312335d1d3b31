"""Networks: recurrent latent conditioner, RGBA layer generators, discriminator
with a feature tap, and the optional encoder bank.

Topology follows the standard deep-convolutional GAN recipe: four
fractionally strided convolution stages in each generator (from a projected
conditioner state), four strided convolution stages in the discriminator and
encoders, batch normalization everywhere except the discriminator input and
generator output layers, rectified-linear activations in generators and
leaky (0.2) ones in the discriminator. Generators never share parameters.

Forward passes are deterministic given parameters and inputs, and reentrant
as long as nobody mutates the parameters concurrently.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import torch
from torch import nn

from .compositor import Composite, LayerImage, compose_stack
from .errors import ShapeError, VariantError

STAGES = 4  # up/down-sampling conv stages; image size must be 16 * 2^k
INIT_STD = 0.02


class Variant(str, Enum):
    """Model family member: alpha loss and encoder bank toggles."""

    CGAN = "cgan"
    CGAN_A = "cgan-a"
    CGAN_VAE = "cgan-vae"
    CGAN_VAE_A = "cgan-vae-a"

    @property
    def uses_alpha(self) -> bool:
        return self in (Variant.CGAN_A, Variant.CGAN_VAE_A)

    @property
    def uses_vae(self) -> bool:
        return self in (Variant.CGAN_VAE, Variant.CGAN_VAE_A)


@dataclass(frozen=True)
class ConditionerState:
    """Hidden and memory-cell vectors of the recurrent conditioner, (B, hidden_dim)."""

    hidden: torch.Tensor
    cell: torch.Tensor


@dataclass(frozen=True)
class LatentSeq:
    """A noise sequence z_1..z_n and the conditioner states h_1..h_n derived from it."""

    z: tuple[torch.Tensor, ...]
    h: tuple[ConditionerState, ...]

    def __post_init__(self):
        if len(self.z) != len(self.h) or not self.z:
            raise ValueError("z and h must have equal nonzero length")


@dataclass(frozen=True)
class DiscriminatorOutput:
    """Real-vs-fake probability (B,) and the last-conv-layer feature vector (B, F)."""

    prob: torch.Tensor
    feature: torch.Tensor


@dataclass(frozen=True)
class EncoderOutput:
    """Mean and log-variance (B, latent_dim) of the approximate posterior q(z|x)."""

    mu: torch.Tensor
    logvar: torch.Tensor


def sample_prior(
    count: int,
    latent_dim: int,
    generator: torch.Generator,
    dtype: torch.dtype = torch.float64,
) -> torch.Tensor:
    """Draw `count` i.i.d. standard-normal latent vectors, (count, latent_dim)."""
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    if latent_dim < 1:
        raise ValueError(f"latent_dim must be >= 1, got {latent_dim}")
    return torch.randn(count, latent_dim, generator=generator, dtype=dtype)


def reparameterize(enc: EncoderOutput, eps: torch.Tensor) -> torch.Tensor:
    """Sample z = mu + exp(logvar/2) * eps, differentiable in mu and logvar."""
    if enc.mu.shape != eps.shape:
        raise ShapeError(f"eps shape {tuple(eps.shape)} != mu shape {tuple(enc.mu.shape)}")
    return enc.mu + torch.exp(0.5 * enc.logvar) * eps


class Conditioner(nn.Module):
    """LSTM cell mapping the noise sequence to per-generator input states."""

    def __init__(self, latent_dim: int, hidden_dim: int):
        super().__init__()
        self.latent_dim = latent_dim
        self.hidden_dim = hidden_dim
        self.cell = nn.LSTMCell(latent_dim, hidden_dim)

    def initial_state(self, batch: int, dtype: torch.dtype | None = None) -> ConditionerState:
        dtype = dtype or self.cell.weight_ih.dtype
        zeros = torch.zeros(batch, self.hidden_dim, dtype=dtype)
        return ConditionerState(hidden=zeros, cell=zeros.clone())

    def step(self, state: ConditionerState, z: torch.Tensor) -> ConditionerState:
        if z.dim() != 2 or z.shape[1] != self.latent_dim:
            raise ShapeError(f"z must be (B, {self.latent_dim}), got {tuple(z.shape)}")
        if state.hidden.shape != (z.shape[0], self.hidden_dim):
            raise ShapeError(
                f"state is (B={state.hidden.shape[0]}, {state.hidden.shape[1]}), "
                f"z batch is {z.shape[0]}"
            )
        h, c = self.cell(z, (state.hidden, state.cell))
        return ConditionerState(hidden=h, cell=c)

    def run(self, zs: list[torch.Tensor] | tuple[torch.Tensor, ...]) -> LatentSeq:
        """Fold the sequence from the all-zeros initial state."""
        if not zs:
            raise ValueError("need at least one noise vector")
        state = self.initial_state(zs[0].shape[0], dtype=zs[0].dtype)
        states = []
        for z in zs:
            state = self.step(state, z)
            states.append(state)
        return LatentSeq(z=tuple(zs), h=tuple(states))


def _stage_channels(base: int) -> list[int]:
    # widest at the smallest spatial resolution
    return [base * 8, base * 4, base * 2, base]


def _check_image_size(image_size: int) -> int:
    if image_size < 16 or image_size % 16 != 0:
        raise ValueError(f"image_size must be a positive multiple of 16, got {image_size}")
    return image_size // (2**STAGES)


class LayerGenerator(nn.Module):
    """Maps a conditioner state to one RGBA layer via four up-sampling conv stages."""

    def __init__(self, hidden_dim: int, image_size: int, base_channels: int):
        super().__init__()
        self.hidden_dim = hidden_dim
        self.image_size = image_size
        s0 = _check_image_size(image_size)
        c = _stage_channels(base_channels)
        self.project = nn.Linear(hidden_dim, c[0] * s0 * s0)
        self.start_shape = (c[0], s0, s0)
        self.start_norm = nn.BatchNorm2d(c[0])
        self.stages = nn.Sequential(
            nn.ConvTranspose2d(c[0], c[1], 4, 2, 1, bias=False),
            nn.BatchNorm2d(c[1]),
            nn.ReLU(),
            nn.ConvTranspose2d(c[1], c[2], 4, 2, 1, bias=False),
            nn.BatchNorm2d(c[2]),
            nn.ReLU(),
            nn.ConvTranspose2d(c[2], c[3], 4, 2, 1, bias=False),
            nn.BatchNorm2d(c[3]),
            nn.ReLU(),
            nn.ConvTranspose2d(c[3], 4, 4, 2, 1),  # output layer: no norm
        )

    def forward(self, hidden: torch.Tensor) -> LayerImage:
        if hidden.dim() != 2 or hidden.shape[1] != self.hidden_dim:
            raise ShapeError(f"hidden must be (B, {self.hidden_dim}), got {tuple(hidden.shape)}")
        x = self.project(hidden).reshape(hidden.shape[0], *self.start_shape)
        x = torch.relu(self.start_norm(x))
        x = self.stages(x)
        rgb = 0.5 * (torch.tanh(x[:, :3]) + 1.0)
        alpha = torch.sigmoid(x[:, 3:])
        return LayerImage(rgb=rgb, alpha=alpha)


class _ConvBackbone(nn.Module):
    """Four strided conv stages shared by the discriminator and encoders."""

    def __init__(self, image_size: int, base_channels: int):
        super().__init__()
        s0 = _check_image_size(image_size)
        c = list(reversed(_stage_channels(base_channels)))  # narrow -> wide
        self.image_size = image_size
        self.feature_dim = c[3] * s0 * s0
        self.stages = nn.Sequential(
            nn.Conv2d(3, c[0], 4, 2, 1),  # input layer: no norm
            nn.LeakyReLU(0.2),
            nn.Conv2d(c[0], c[1], 4, 2, 1, bias=False),
            nn.BatchNorm2d(c[1]),
            nn.LeakyReLU(0.2),
            nn.Conv2d(c[1], c[2], 4, 2, 1, bias=False),
            nn.BatchNorm2d(c[2]),
            nn.LeakyReLU(0.2),
            nn.Conv2d(c[2], c[3], 4, 2, 1, bias=False),
            nn.BatchNorm2d(c[3]),
            nn.LeakyReLU(0.2),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 4 or x.shape[1] != 3:
            raise ShapeError(f"expected (B,3,H,W) input, got {tuple(x.shape)}")
        if x.shape[2] != self.image_size or x.shape[3] != self.image_size:
            raise ShapeError(
                f"expected {self.image_size}x{self.image_size} input, got {x.shape[2]}x{x.shape[3]}"
            )
        return self.stages(x).flatten(1)


class Discriminator(nn.Module):
    """Real-vs-fake classifier; also exposes its last conv activations as features."""

    def __init__(self, image_size: int, base_channels: int):
        super().__init__()
        self.backbone = _ConvBackbone(image_size, base_channels)
        self.classify = nn.Linear(self.backbone.feature_dim, 1)

    @property
    def feature_dim(self) -> int:
        return self.backbone.feature_dim

    def forward(self, x: torch.Tensor) -> DiscriminatorOutput:
        feature = self.backbone(x)
        prob = torch.sigmoid(self.classify(feature)).squeeze(1)
        return DiscriminatorOutput(prob=prob, feature=feature)


class Encoder(nn.Module):
    """Maps an RGB image to the mean and log-variance of its latent posterior."""

    def __init__(self, image_size: int, base_channels: int, latent_dim: int):
        super().__init__()
        self.latent_dim = latent_dim
        self.backbone = _ConvBackbone(image_size, base_channels)
        self.head = nn.Linear(self.backbone.feature_dim, 2 * latent_dim)

    def forward(self, x: torch.Tensor) -> EncoderOutput:
        stats = self.head(self.backbone(x))
        return EncoderOutput(mu=stats[:, : self.latent_dim], logvar=stats[:, self.latent_dim :])


def init_parameters(module: nn.Module, generator: torch.Generator) -> None:
    """Deterministically initialize all parameters using the given generator.

    Conv/linear/recurrent weights ~ N(0, 0.02^2) and zero biases; norm scales
    ~ N(1, 0.02^2), zero shifts, reset running statistics.
    """
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
            m.weight.data.normal_(0.0, INIT_STD, generator=generator)
            if m.bias is not None:
                m.bias.data.zero_()
        elif isinstance(m, nn.BatchNorm2d):
            m.weight.data.normal_(1.0, INIT_STD, generator=generator)
            m.bias.data.zero_()
            m.reset_running_stats()
        elif isinstance(m, nn.LSTMCell):
            m.weight_ih.data.normal_(0.0, INIT_STD, generator=generator)
            m.weight_hh.data.normal_(0.0, INIT_STD, generator=generator)
            m.bias_ih.data.zero_()
            m.bias_hh.data.zero_()


class ModelBundle(nn.Module):
    """All parameterized pieces of one model: conditioner, n generators, the
    discriminator, and (for VAE variants) n encoders, plus architecture metadata."""

    def __init__(
        self,
        n: int,
        latent_dim: int = 64,
        hidden_dim: int = 128,
        image_size: int = 64,
        base_channels: int = 64,
        variant: Variant = Variant.CGAN,
        dtype: torch.dtype = torch.float64,
    ):
        super().__init__()
        if n < 1:
            raise ValueError(f"n must be >= 1, got {n}")
        if latent_dim < 1 or hidden_dim < 1 or base_channels < 1:
            raise ValueError("latent_dim, hidden_dim and base_channels must be >= 1")
        _check_image_size(image_size)
        self.n = n
        self.latent_dim = latent_dim
        self.hidden_dim = hidden_dim
        self.image_size = image_size
        self.base_channels = base_channels
        self.variant = Variant(variant)
        self.conditioner = Conditioner(latent_dim, hidden_dim)
        self.generators = nn.ModuleList(
            LayerGenerator(hidden_dim, image_size, base_channels) for _ in range(n)
        )
        self.discriminator = Discriminator(image_size, base_channels)
        if self.variant.uses_vae:
            self.encoders = nn.ModuleList(
                Encoder(image_size, base_channels, latent_dim) for _ in range(n)
            )
        else:
            self.encoders = None
        self.to(dtype)

    @classmethod
    def create(cls, *, seed: int, **kwargs) -> "ModelBundle":
        """Build a bundle whose initial parameters are a pure function of `seed`."""
        bundle = cls(**kwargs)
        g = torch.Generator()
        g.manual_seed(seed)
        init_parameters(bundle, g)
        return bundle

    @property
    def dtype(self) -> torch.dtype:
        return self.conditioner.cell.weight_ih.dtype

    def metadata(self) -> dict:
        return {
            "n": self.n,
            "latent_dim": self.latent_dim,
            "hidden_dim": self.hidden_dim,
            "image_size": self.image_size,
            "base_channels": self.base_channels,
            "variant": self.variant.value,
            "dtype": str(self.dtype).removeprefix("torch."),
        }

    def parameter_groups(self) -> dict[str, list[nn.Parameter]]:
        """Independently trained parameter groups, in a fixed naming scheme."""
        groups = {
            "discriminator": list(self.discriminator.parameters()),
            "conditioner": list(self.conditioner.parameters()),
        }
        for i, gen in enumerate(self.generators):
            groups[f"generator_{i + 1}"] = list(gen.parameters())
        if self.encoders is not None:
            for i, enc in enumerate(self.encoders):
                groups[f"encoder_{i + 1}"] = list(enc.parameters())
        return groups

    def _check_index(self, index: int) -> int:
        if not 1 <= index <= self.n:
            raise ValueError(f"index must be in 1..{self.n}, got {index}")
        return index - 1

    def condition(self, zs) -> LatentSeq:
        if len(zs) != self.n:
            raise ValueError(f"expected {self.n} noise vectors, got {len(zs)}")
        return self.conditioner.run(list(zs))

    def generate_layer(self, index: int, state: ConditionerState) -> LayerImage:
        """Run generator `index` (1-based) on a conditioner state."""
        return self.generators[self._check_index(index)](state.hidden)

    def discriminate(self, x: torch.Tensor | Composite) -> DiscriminatorOutput:
        rgb = x.rgb if isinstance(x, Composite) else x
        return self.discriminator(rgb)

    def encode(self, index: int, x: torch.Tensor | Composite) -> EncoderOutput:
        """Run encoder `index` (1-based) on a real image batch."""
        if self.encoders is None:
            raise VariantError(
                f"variant '{self.variant.value}' has no encoders; "
                "encoding needs a cgan-vae or cgan-vae-a model"
            )
        rgb = x.rgb if isinstance(x, Composite) else x
        return self.encoders[self._check_index(index)](rgb)

    def forward_generate(
        self, zs
    ) -> tuple[list[LayerImage], Composite, list[Composite]]:
        """Full generative pass: conditioner over z_1..z_n, one layer per
        generator, then sequential alpha blending. Returns the layers, the
        final composite, and all intermediate composites."""
        seq = self.condition(zs)
        layers = [self.generate_layer(t + 1, seq.h[t]) for t in range(self.n)]
        final, intermediates = compose_stack(layers)
        return layers, final, intermediates
