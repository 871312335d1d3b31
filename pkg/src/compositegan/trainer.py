"""Adversarial training loops for the plain and encoder-backed variants.

Per iteration: one noise set is drawn and reused everywhere; the
discriminator takes one ascent step on the adversarial objective; each
generator (with the conditioner) takes one descent step in order, each on a
freshly recomputed forward pass; encoder variants then step each encoder on
the variational objective. Every group has its own Adam optimizer, so a
sub-step touches exactly its own parameters.

The loss rates written as multipliers inside the gradient (the encoder
variant's generator update) are realized as loss weights relative to the
generator step size: Adam at rate gamma_g on
(gamma_g_gan/gamma_g) * L_gan + (gamma_g_vae/gamma_g) * L_vae, which reduces
to the written update exactly under plain gradient descent. Zero rates skip
the corresponding step (parameters stay bitwise unchanged; losses are still
evaluated and reported).
"""
from __future__ import annotations

import logging
from contextlib import nullcontext
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import torch

from .config import TrainConfig
from .data import ImageDataset
from .errors import NonFiniteLossError, VariantError
from .losses import (
    LossReport,
    alpha_budget_deviation,
    alpha_loss,
    gan_loss,
    generator_gan_loss,
    kl_term,
    recon_feature,
    recon_pixel,
    vae_loss,
)
from .nets import ModelBundle, init_parameters, reparameterize, sample_prior

LOG = logging.getLogger("compositegan.trainer")


@dataclass
class TrainState:
    """Mutable training progress: step counter, optimizers, RNG, and history."""

    iteration: int
    rng: torch.Generator
    optimizers: dict[str, torch.optim.Adam]
    history: list[LossReport] = field(default_factory=list)
    clip_events: int = 0


def build_optimizers(bundle: ModelBundle, config: TrainConfig) -> dict[str, torch.optim.Adam]:
    """One Adam per parameter group; the conditioner shares the generator rate."""
    rates = {"discriminator": config.gamma_d, "conditioner": config.gamma_g}
    for i in range(bundle.n):
        rates[f"generator_{i + 1}"] = config.gamma_g
        if bundle.encoders is not None:
            rates[f"encoder_{i + 1}"] = config.gamma_e
    groups = bundle.parameter_groups()
    return {
        name: torch.optim.Adam(
            groups[name],
            lr=rates[name],
            betas=(config.adam_beta1, config.adam_beta2),
            eps=config.adam_eps,
        )
        for name in groups
    }


def initialize(config: TrainConfig) -> tuple[ModelBundle, TrainState]:
    """Fresh bundle and state; everything downstream is a pure function of the seed.

    The seed is split into independent init and sampling streams, so the
    noise sequence a run sees does not depend on how many parameters the
    variant happens to initialize.
    """
    config.validate()
    bundle = ModelBundle(
        n=config.n,
        latent_dim=config.latent_dim,
        hidden_dim=config.hidden_dim,
        image_size=config.image_size,
        base_channels=config.base_channels,
        variant=config.variant,
    )
    master = torch.Generator()
    master.manual_seed(config.seed)
    init_seed, train_seed = (int(s) for s in torch.randint(0, 2**62, (2,), generator=master))
    init_rng = torch.Generator()
    init_rng.manual_seed(init_seed)
    init_parameters(bundle, init_rng)
    rng = torch.Generator()
    rng.manual_seed(train_seed)
    return bundle, TrainState(iteration=0, rng=rng, optimizers=build_optimizers(bundle, config))


def _finite(value: torch.Tensor, term: str, iteration: int) -> torch.Tensor:
    if not bool(torch.isfinite(value).all()):
        raise NonFiniteLossError(term, iteration)
    return value


def _clip_and_step(
    state: TrainState, config: TrainConfig, opt_names: list[str]
) -> None:
    params = [p for name in opt_names for p in state.optimizers[name].param_groups[0]["params"]]
    if config.clip_norm > 0:
        total = torch.nn.utils.clip_grad_norm_(params, config.clip_norm)
        if float(total) > config.clip_norm:
            state.clip_events += 1
            LOG.info("gradient norm %.3g clipped to %.3g", float(total), config.clip_norm)
    for name in opt_names:
        state.optimizers[name].step()


def _check_bundle(bundle: ModelBundle, config: TrainConfig) -> None:
    if (
        bundle.n != config.n
        or bundle.latent_dim != config.latent_dim
        or bundle.hidden_dim != config.hidden_dim
        or bundle.image_size != config.image_size
        or bundle.base_channels != config.base_channels
        or bundle.variant != config.variant
    ):
        raise ValueError("bundle architecture does not match the training config")


def _train_step(
    bundle: ModelBundle,
    state: TrainState,
    config: TrainConfig,
    batch: torch.Tensor,
) -> LossReport:
    iteration = state.iteration + 1
    n = bundle.n
    m = batch.shape[0]
    dtype = bundle.dtype
    batch = batch.to(dtype)
    alpha_cfg = config.resolved_alpha()
    uses_vae = bundle.encoders is not None

    zs = [sample_prior(m, config.latent_dim, state.rng, dtype) for _ in range(n)]
    eps = (
        [sample_prior(m, config.latent_dim, state.rng, dtype) for _ in range(n)]
        if uses_vae
        else None
    )
    vae_parts: dict[str, float] = {}

    def eval_gan():
        layers, final, _ = bundle.forward_generate(zs)
        d_real = bundle.discriminate(batch).prob
        d_fake = bundle.discriminate(final.rgb).prob
        return layers, d_real, d_fake

    def eval_vae():
        encs = [bundle.encode(i + 1, batch) for i in range(n)]
        z_enc = [reparameterize(encs[i], eps[i]) for i in range(n)]
        _, xhat, _ = bundle.forward_generate(z_enc)
        kl = torch.stack([kl_term(e.mu, e.logvar) for e in encs]).sum(dim=0)
        pix = recon_pixel(batch, xhat.rgb)
        feat_target = bundle.discriminate(batch).feature.detach()
        feat = bundle.discriminate(xhat.rgb).feature
        fea = recon_feature(feat_target, feat)
        _finite(kl.sum(), "vae_kl", iteration)
        _finite(pix.sum(), "vae_pixel", iteration)
        _finite(fea.sum(), "vae_feature", iteration)
        if not vae_parts:
            vae_parts.update(
                vae_kl=float(kl.detach().sum()),
                vae_pixel=float(pix.detach().sum()),
                vae_feature=float(fea.detach().sum()),
            )
        return vae_loss(kl, pix, fea)

    # --- discriminator step: ascend the adversarial objective
    with torch.no_grad():
        _, final, _ = bundle.forward_generate(zs)
    fake_frozen = final.rgb
    d_grad = config.gamma_d > 0
    with nullcontext() if d_grad else torch.no_grad():
        d_real = bundle.discriminate(batch).prob
        d_fake = bundle.discriminate(fake_frozen).prob
        lgan = _finite(gan_loss(d_real, d_fake), "gan", iteration)
    report_gan = float(lgan.detach())
    if d_grad:
        bundle.zero_grad(set_to_none=True)
        (-lgan).backward()
        _clip_and_step(state, config, ["discriminator"])

    # --- generator sub-steps, in order
    g_grad = config.gamma_g > 0
    if uses_vae:
        w_gan = config.gamma_g_gan / config.gamma_g if g_grad else 0.0
        w_vae = config.gamma_g_vae / config.gamma_g if g_grad else 0.0
    else:
        w_gan, w_vae = 1.0, 0.0
    gen_gan: list[float] = []
    gen_alpha: list[float] = []
    gen_dev: list[float] = []

    def generator_objective():
        layers, d_real_g, d_fake_g = eval_gan()
        lgan_g = _finite(gan_loss(d_real_g, d_fake_g), "gan", iteration)
        if config.nonsaturating:
            base = generator_gan_loss(d_fake_g, nonsaturating=True)
        else:
            base = lgan_g
        loss = base if w_gan == 1.0 else w_gan * base
        if alpha_cfg is not None:
            total_alpha = sum(alpha_loss(layer, alpha_cfg) for layer in layers)
            _finite(total_alpha, "alpha", iteration)
            loss = loss + alpha_cfg.weight * total_alpha
        if uses_vae and w_vae != 0.0:
            loss = loss + w_vae * eval_vae()
        return loss, layers, lgan_g

    def record_generator(i: int, layers, lgan_g) -> None:
        gen_gan.append(float(lgan_g.detach()))
        if alpha_cfg is not None:
            gen_alpha.append(float(alpha_loss(layers[i], alpha_cfg).detach()))
            gen_dev.append(alpha_budget_deviation(layers[i], alpha_cfg.budget))

    if config.single_backward:
        with nullcontext() if g_grad else torch.no_grad():
            loss, layers, lgan_g = generator_objective()
        for i in range(n):
            record_generator(i, layers, lgan_g)
        if g_grad:
            bundle.zero_grad(set_to_none=True)
            loss.backward()
            names = [f"generator_{i + 1}" for i in range(n)] + ["conditioner"]
            _clip_and_step(state, config, names)
    else:
        for i in range(n):
            with nullcontext() if g_grad else torch.no_grad():
                loss, layers, lgan_g = generator_objective()
            record_generator(i, layers, lgan_g)
            if g_grad:
                bundle.zero_grad(set_to_none=True)
                loss.backward()
                _clip_and_step(state, config, [f"generator_{i + 1}", "conditioner"])

    # --- encoder sub-steps
    if uses_vae:
        if config.gamma_e > 0:
            for i in range(n):
                lvae = eval_vae()
                bundle.zero_grad(set_to_none=True)
                lvae.backward()
                _clip_and_step(state, config, [f"encoder_{i + 1}"])
        elif not vae_parts:
            with torch.no_grad():
                eval_vae()  # report the variational terms even when nothing steps

    report = LossReport(
        iteration=iteration,
        gan=report_gan,
        generator_gan=tuple(gen_gan),
        generator_alpha=tuple(gen_alpha) if alpha_cfg is not None else None,
        generator_alpha_dev=tuple(gen_dev) if alpha_cfg is not None else None,
        alpha=sum(gen_alpha) if alpha_cfg is not None else None,
        vae_kl=vae_parts.get("vae_kl"),
        vae_pixel=vae_parts.get("vae_pixel"),
        vae_feature=vae_parts.get("vae_feature"),
    )
    state.iteration = iteration
    state.history.append(report)
    return report


def train_step_cgan(
    bundle: ModelBundle, state: TrainState, config: TrainConfig, batch: torch.Tensor
) -> LossReport:
    """One iteration of the plain adversarial algorithm (with optional alpha loss)."""
    if config.variant.uses_vae:
        raise VariantError(f"variant '{config.variant.value}' needs the encoder-variant step")
    _check_bundle(bundle, config)
    return _train_step(bundle, state, config, batch)


def train_step_cgan_vae(
    bundle: ModelBundle, state: TrainState, config: TrainConfig, batch: torch.Tensor
) -> LossReport:
    """One iteration of the encoder-backed algorithm (with optional alpha loss)."""
    if not config.variant.uses_vae:
        raise VariantError(f"variant '{config.variant.value}' has no encoders")
    _check_bundle(bundle, config)
    return _train_step(bundle, state, config, batch)


def train_step(
    bundle: ModelBundle, state: TrainState, config: TrainConfig, batch: torch.Tensor
) -> LossReport:
    if config.variant.uses_vae:
        return train_step_cgan_vae(bundle, state, config, batch)
    return train_step_cgan(bundle, state, config, batch)


def fit(
    config: TrainConfig,
    dataset: ImageDataset,
    callback: Callable[[ModelBundle, TrainState, LossReport], None] | None = None,
    *,
    bundle: ModelBundle | None = None,
    state: TrainState | None = None,
    checkpoint_dir: str | Path | None = None,
    log_file: str | Path | None = None,
) -> tuple[ModelBundle, TrainState]:
    """Run the configured number of iterations over uniformly drawn minibatches.

    Pass a (bundle, state) pair restored from a checkpoint to continue an
    interrupted run; the trajectory matches uninterrupted training for the
    same seed. Periodic checkpoints go to `checkpoint_dir/ckpt_{iter}` every
    `config.checkpoint_every` iterations; `log_file` receives one report line
    per iteration. A non-finite loss aborts with the offending term named,
    leaving the last checkpoint in place.
    """
    config.validate()
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    if config.m > len(dataset):
        raise ValueError(f"minibatch size {config.m} exceeds dataset size {len(dataset)}")
    if (bundle is None) != (state is None):
        raise ValueError("pass both bundle and state to resume, or neither")
    if bundle is None:
        bundle, state = initialize(config)
    else:
        _check_bundle(bundle, config)
    bundle.train()
    if checkpoint_dir is not None:
        checkpoint_dir = Path(checkpoint_dir)
        checkpoint_dir.mkdir(parents=True, exist_ok=True)

    log_fh = open(log_file, "a") if log_file is not None else None
    try:
        while state.iteration < config.iterations:
            order = torch.randperm(len(dataset), generator=state.rng)
            batch = dataset.select(order[: config.m])
            report = train_step(bundle, state, config, batch)
            if log_fh is not None:
                log_fh.write(report.log_line() + "\n")
                log_fh.flush()
            if (
                checkpoint_dir is not None
                and config.checkpoint_every > 0
                and state.iteration % config.checkpoint_every == 0
            ):
                from .persist import save_checkpoint

                save_checkpoint(
                    checkpoint_dir / f"ckpt_{state.iteration}", bundle, state=state, config=config
                )
            if callback is not None:
                callback(bundle, state, report)
    finally:
        if log_fh is not None:
            log_fh.close()
    return bundle, state
