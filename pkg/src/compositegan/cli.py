"""Command-line interface: training, sampling, decomposition, reconstruction,
latent swapping, the fixed-z1 sweep, and sample-quality evaluation.

Every command that takes --seed is fully deterministic; image outputs are
8-bit PNGs written atomically.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import torch

from .compositor import LayerImage, compose_stack
from .config import TrainConfig, read_config, write_config
from .data import load_dataset
from .errors import CompositeGanError, VariantError
from .metrics import SsimParams, q_metric
from .nets import ModelBundle, Variant, sample_prior
from .persist import load_checkpoint, save_checkpoint
from .pngio import (
    image_grid,
    load_rgb_png,
    over_checkerboard,
    quantize_unit,
    save_rgb_png,
    save_rgba_png,
    write_bytes_atomic,
)
from .trainer import fit

LOG = logging.getLogger("compositegan.cli")


def _load_eval_bundle(ckpt: str) -> ModelBundle:
    bundle = load_checkpoint(ckpt).bundle
    bundle.eval()
    return bundle


def _sample_finals(
    bundle: ModelBundle, count: int, seed: int, chunk: int = 64
) -> torch.Tensor:
    """Generate `count` final composites deterministically, (count,3,H,W)."""
    g = torch.Generator()
    g.manual_seed(seed)
    outs = []
    with torch.no_grad():
        remaining = count
        while remaining > 0:
            b = min(chunk, remaining)
            zs = [sample_prior(b, bundle.latent_dim, g, bundle.dtype) for _ in range(bundle.n)]
            _, final, _ = bundle.forward_generate(zs)
            outs.append(final.rgb)
            remaining -= b
    return torch.cat(outs)


def _load_image_at(path: str, size: int) -> torch.Tensor:
    from .data import load_image_file

    return load_image_file(path, size)


def _encode_latents(bundle: ModelBundle, image: torch.Tensor) -> list[torch.Tensor]:
    """Posterior means of every encoder for a (3,H,W) image."""
    batch = image[None].to(bundle.dtype)
    return [bundle.encode(i + 1, batch).mu for i in range(bundle.n)]


def cmd_train(args) -> int:
    config, spec = read_config(args.config)
    if args.variant is not None or args.n is not None:
        updates = config.to_dict()
        if args.variant is not None:
            updates["variant"] = args.variant
            if not Variant(args.variant).uses_alpha:
                updates["alpha_budget"] = None
                updates["alpha_weight"] = None
        if args.n is not None:
            updates["n"] = args.n
        config = TrainConfig.from_dict(updates)
        config.validate()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataset = load_dataset(spec)
    write_config(out / "config.txt", config, spec)
    LOG.info("training %s for %d iterations on %d images", config.variant.value,
             config.iterations, len(dataset))
    bundle, state = fit(
        config,
        dataset,
        checkpoint_dir=out,
        log_file=out / "train.log",
    )
    save_checkpoint(out / "ckpt_final", bundle, state=state, config=config)
    print(f"trained {config.iterations} iterations; checkpoint at {out / 'ckpt_final'}")
    return 0


def cmd_sample(args) -> int:
    bundle = _load_eval_bundle(args.ckpt)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    finals = _sample_finals(bundle, args.count, args.seed)
    for i in range(finals.shape[0]):
        save_rgb_png(out / f"sample_{i:05d}.png", finals[i])
    print(f"wrote {finals.shape[0]} samples to {out}")
    return 0


def cmd_decompose(args) -> int:
    bundle = _load_eval_bundle(args.ckpt)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    g = torch.Generator()
    g.manual_seed(args.seed)
    with torch.no_grad():
        zs = [sample_prior(args.count, bundle.latent_dim, g, bundle.dtype) for _ in range(bundle.n)]
        layers, _, _ = bundle.forward_generate(zs)
        # snap the layers to the 8-bit grid before deriving the exported
        # composites, so the file set stays consistent under re-composition
        layers = [
            LayerImage(rgb=quantize_unit(l.rgb), alpha=quantize_unit(l.alpha)) for l in layers
        ]
        final, intermediates = compose_stack(layers)
    for s in range(args.count):
        sdir = out / f"sample_{s:03d}"
        sdir.mkdir(exist_ok=True)
        row = []
        for t, layer in enumerate(layers, start=1):
            save_rgba_png(sdir / f"layer_{t}.png", layer.rgb[s], layer.alpha[s])
            row.append(over_checkerboard(layer.rgb[s], layer.alpha[s]))
        for t, comp in enumerate(intermediates, start=1):
            save_rgb_png(sdir / f"composite_{t}.png", comp.rgb[s])
            row.append(comp.rgb[s])
        save_rgb_png(sdir / "final.png", final.rgb[s])
        save_rgb_png(sdir / "preview.png", image_grid(row, rows=1, cols=len(row)))
    print(f"wrote {args.count} decompositions to {out}")
    return 0


def cmd_fix_z1(args) -> int:
    bundle = _load_eval_bundle(args.ckpt)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    g = torch.Generator()
    g.manual_seed(args.seed)
    rows, cols = args.rows, args.cols
    cells = []
    with torch.no_grad():
        z1 = sample_prior(rows, bundle.latent_dim, g, bundle.dtype)
        for r in range(rows):
            z1_row = z1[r : r + 1].expand(cols, -1)
            zs = [z1_row] + [
                sample_prior(cols, bundle.latent_dim, g, bundle.dtype)
                for _ in range(bundle.n - 1)
            ]
            _, final, _ = bundle.forward_generate(zs)
            cells.extend(final.rgb[c] for c in range(cols))
    save_rgb_png(out / "fix_z1_grid.png", image_grid(cells, rows=rows, cols=cols))
    print(f"wrote {rows}x{cols} fixed-z1 grid to {out / 'fix_z1_grid.png'}")
    return 0


def cmd_reconstruct(args) -> int:
    bundle = _load_eval_bundle(args.ckpt)
    if bundle.encoders is None:
        raise VariantError(
            f"checkpoint is a '{bundle.variant.value}' model without encoders; "
            "reconstruction needs a cgan-vae or cgan-vae-a checkpoint"
        )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    image = _load_image_at(args.image, bundle.image_size)
    with torch.no_grad():
        zs = _encode_latents(bundle, image)
        layers, final, _ = bundle.forward_generate(zs)
    save_rgb_png(out / "input.png", image)
    save_rgb_png(out / "reconstruction.png", final.rgb[0])
    for t, layer in enumerate(layers, start=1):
        save_rgba_png(out / f"layer_{t}.png", layer.rgb[0], layer.alpha[0])
    print(f"wrote reconstruction to {out}")
    return 0


def cmd_swap(args) -> int:
    bundle = _load_eval_bundle(args.ckpt)
    if bundle.encoders is None:
        raise VariantError(
            f"checkpoint is a '{bundle.variant.value}' model without encoders; "
            "latent swapping needs a cgan-vae or cgan-vae-a checkpoint"
        )
    if not 1 <= args.encoder <= bundle.n:
        raise ValueError(f"--encoder must be in 1..{bundle.n}, got {args.encoder}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    image_a = _load_image_at(args.image_a, bundle.image_size)
    image_b = _load_image_at(args.image_b, bundle.image_size)
    with torch.no_grad():
        zs = _encode_latents(bundle, image_a)
        zs_b = _encode_latents(bundle, image_b)
        zs[args.encoder - 1] = zs_b[args.encoder - 1]
        _, final, _ = bundle.forward_generate(zs)
    save_rgb_png(out / "image_a.png", image_a)
    save_rgb_png(out / "image_b.png", image_b)
    save_rgb_png(out / "swapped.png", final.rgb[0])
    print(f"wrote encoder-{args.encoder} swap to {out / 'swapped.png'}")
    return 0


def _load_image_dir(path: str, size: int | None) -> torch.Tensor:
    """Load a directory of images in name order (no shuffling), (N,3,S,S)."""
    from .data import IMAGE_SUFFIXES, load_image_file

    root = Path(path)
    if not root.is_dir():
        raise ValueError(f"not a directory: {root}")
    files = sorted(p for p in root.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        raise ValueError(f"no usable images in {root}")
    if size is None:
        size = load_rgb_png(files[0]).shape[1]
    return torch.stack([load_image_file(p, size) for p in files])


def cmd_eval(args) -> int:
    if (args.ckpt is None) == (args.samples is None):
        raise ValueError("pass exactly one of --ckpt or --samples")
    if args.ckpt is not None:
        bundle = _load_eval_bundle(args.ckpt)
        samples = _sample_finals(bundle, args.count, args.seed)
        size = bundle.image_size
    else:
        samples = _load_image_dir(args.samples, None)
        size = samples.shape[2]
    test = _load_image_dir(args.test, size)
    report = q_metric(samples.numpy(), test.numpy(), SsimParams())
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_bytes_atomic(out / "q_report.txt", report.to_text().encode())
    if args.per_item_csv:
        write_bytes_atomic(out / "q_per_item.csv", report.per_item_csv().encode())
    print(report.to_text(), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="compositegan",
        description="Layered image generation with alpha-blended multi-generator GANs.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a config file")
    p.add_argument("--config", required=True, help="flat key=value config file")
    p.add_argument("--out", required=True, help="output directory (checkpoints, log)")
    p.add_argument("--variant", choices=[v.value for v in Variant], help="override the variant")
    p.add_argument("--n", type=int, help="override the generator count")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="write final composites from a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("decompose", help="export per-layer RGBA images and intermediates")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("reconstruct", help="encode an image and regenerate it")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("swap", help="swap one encoder's latent between two images")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--image-a", required=True)
    p.add_argument("--image-b", required=True)
    p.add_argument("--encoder", type=int, required=True, help="1-based encoder index")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_swap)

    p = sub.add_parser("fix-z1", help="grid of samples sharing z1 per row")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--rows", type=int, default=4)
    p.add_argument("--cols", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_fix_z1)

    p = sub.add_parser("eval", help="sample-quality report against a test directory")
    p.add_argument("--ckpt", help="checkpoint to sample from")
    p.add_argument("--samples", help="directory of pre-generated sample PNGs")
    p.add_argument("--test", required=True, help="directory of test images")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=1024, help="samples to draw with --ckpt")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--per-item-csv", action="store_true")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, CompositeGanError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
