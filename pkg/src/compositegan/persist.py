"""Self-describing checkpoint container.

Layout: an 8-byte magic, a little-endian uint64 header length, a JSON header
(architecture metadata plus a directory of named tensors), then the tensor
payload as contiguous little-endian bytes. Loading rebuilds the model from
the header and rejects any mismatch between the directory and the
architecture it claims. When training state is included, the header also
carries the full train config so optimizers can be reconstructed, and the
payload adds optimizer moments, the RNG state, and the loss history.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .config import TrainConfig
from .errors import CheckpointError
from .losses import LossReport
from .nets import ModelBundle
from .pngio import write_bytes_atomic
from .trainer import TrainState, build_optimizers

MAGIC = b"CGANCKPT"
FORMAT_VERSION = 1

_NP_DTYPES = {
    "float64": "<f8",
    "float32": "<f4",
    "int64": "<i8",
    "uint8": "|u1",
}
_TORCH_DTYPES = {
    "float64": torch.float64,
    "float32": torch.float32,
    "int64": torch.int64,
    "uint8": torch.uint8,
}


def _dtype_name(t: torch.Tensor) -> str:
    name = str(t.dtype).removeprefix("torch.")
    if name not in _NP_DTYPES:
        raise CheckpointError(f"unsupported tensor dtype {name}")
    return name


def _tensor_bytes(t: torch.Tensor) -> bytes:
    arr = t.detach().cpu().contiguous().numpy()
    return arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()


@dataclass
class LoadedCheckpoint:
    bundle: ModelBundle
    state: TrainState | None
    config: TrainConfig | None


def _collect_tensors(
    bundle: ModelBundle, state: TrainState | None
) -> tuple[dict[str, torch.Tensor], dict | None]:
    tensors: dict[str, torch.Tensor] = {}
    for key, value in bundle.state_dict().items():
        tensors[f"model/{key}"] = value
    train_meta = None
    if state is not None:
        tensors["train/rng"] = state.rng.get_state()
        for name, opt in state.optimizers.items():
            for idx, p in enumerate(opt.param_groups[0]["params"]):
                st = opt.state.get(p)
                if not st:
                    continue
                tensors[f"optim/{name}/{idx}/step"] = torch.as_tensor(
                    st["step"], dtype=torch.float32
                )
                tensors[f"optim/{name}/{idx}/exp_avg"] = st["exp_avg"]
                tensors[f"optim/{name}/{idx}/exp_avg_sq"] = st["exp_avg_sq"]
        fields = list(state.history[0].fields()) if state.history else []
        rows = torch.tensor(
            [[r.fields()[f] for f in fields] for r in state.history], dtype=torch.float64
        ).reshape(len(state.history), len(fields))
        tensors["train/history"] = rows
        train_meta = {
            "iteration": state.iteration,
            "optimizer_names": list(state.optimizers),
            "history_fields": fields,
        }
    return tensors, train_meta


def save_checkpoint(
    path: str | Path,
    bundle: ModelBundle,
    *,
    state: TrainState | None = None,
    config: TrainConfig | None = None,
) -> None:
    """Write a checkpoint; include `state` (with its `config`) to make it resumable."""
    if state is not None and config is None:
        raise ValueError("saving training state requires the train config")
    tensors, train_meta = _collect_tensors(bundle, state)
    if train_meta is not None:
        train_meta["config"] = config.to_dict()

    directory = []
    payload = bytearray()
    for name, t in tensors.items():
        blob = _tensor_bytes(t)
        directory.append(
            {
                "name": name,
                "dtype": _dtype_name(t),
                "shape": list(t.shape),
                "offset": len(payload),
                "nbytes": len(blob),
            }
        )
        payload.extend(blob)
    header = {
        "version": FORMAT_VERSION,
        "arch": bundle.metadata(),
        "tensors": directory,
        "train": train_meta,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    blob = MAGIC + struct.pack("<Q", len(header_bytes)) + header_bytes + bytes(payload)
    write_bytes_atomic(path, blob)


def _read_header(raw: bytes, path) -> tuple[dict, bytes]:
    if len(raw) < len(MAGIC) + 8 or raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    (hlen,) = struct.unpack("<Q", raw[len(MAGIC) : len(MAGIC) + 8])
    start = len(MAGIC) + 8
    if len(raw) < start + hlen:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(raw[start : start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header") from exc
    if header.get("version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {header.get('version')}")
    return header, raw[start + hlen :]


def _read_tensor(entry: dict, payload: bytes, path) -> torch.Tensor:
    np_dtype = _NP_DTYPES.get(entry["dtype"])
    if np_dtype is None:
        raise CheckpointError(f"{path}: unknown tensor dtype '{entry['dtype']}'")
    end = entry["offset"] + entry["nbytes"]
    if end > len(payload):
        raise CheckpointError(f"{path}: truncated payload for tensor '{entry['name']}'")
    count = int(np.prod(entry["shape"], dtype=np.int64)) if entry["shape"] else 1
    if entry["nbytes"] != count * np.dtype(np_dtype).itemsize:
        raise CheckpointError(f"{path}: size mismatch for tensor '{entry['name']}'")
    arr = np.frombuffer(payload[entry["offset"] : end], dtype=np_dtype)
    arr = arr.reshape(entry["shape"]).copy()
    return torch.from_numpy(arr).to(_TORCH_DTYPES[entry["dtype"]])


def load_checkpoint(path: str | Path) -> LoadedCheckpoint:
    """Read a checkpoint, rebuilding the bundle (and training state if present).

    Raises CheckpointError when the stored tensors do not match the
    architecture the header declares.
    """
    raw = Path(path).read_bytes()
    header, payload = _read_header(raw, path)
    arch = header["arch"]
    try:
        bundle = ModelBundle(
            n=arch["n"],
            latent_dim=arch["latent_dim"],
            hidden_dim=arch["hidden_dim"],
            image_size=arch["image_size"],
            base_channels=arch["base_channels"],
            variant=arch["variant"],
            dtype=_TORCH_DTYPES[arch["dtype"]],
        )
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"{path}: invalid architecture metadata: {exc}") from exc

    tensors = {}
    for entry in header["tensors"]:
        tensors[entry["name"]] = _read_tensor(entry, payload, path)

    model_state = {
        name.removeprefix("model/"): t for name, t in tensors.items() if name.startswith("model/")
    }
    expected = bundle.state_dict()
    if set(model_state) != set(expected):
        missing = sorted(set(expected) - set(model_state))[:3]
        extra = sorted(set(model_state) - set(expected))[:3]
        raise CheckpointError(
            f"{path}: tensor directory does not match declared architecture "
            f"(missing {missing}, unexpected {extra})"
        )
    for key, t in model_state.items():
        if tuple(t.shape) != tuple(expected[key].shape):
            raise CheckpointError(
                f"{path}: tensor '{key}' has shape {tuple(t.shape)}, "
                f"architecture implies {tuple(expected[key].shape)}"
            )
    bundle.load_state_dict(model_state)

    train_meta = header.get("train")
    if train_meta is None:
        return LoadedCheckpoint(bundle=bundle, state=None, config=None)

    config = TrainConfig.from_dict(train_meta["config"])
    config.validate()
    optimizers = build_optimizers(bundle, config)
    if list(optimizers) != train_meta["optimizer_names"]:
        raise CheckpointError(f"{path}: optimizer groups do not match the architecture")
    for name, opt in optimizers.items():
        for idx, p in enumerate(opt.param_groups[0]["params"]):
            key = f"optim/{name}/{idx}/exp_avg"
            if key not in tensors:
                continue
            opt.state[p] = {
                "step": tensors[f"optim/{name}/{idx}/step"].to(torch.float32),
                "exp_avg": tensors[key],
                "exp_avg_sq": tensors[f"optim/{name}/{idx}/exp_avg_sq"],
            }

    rng = torch.Generator()
    rng.set_state(tensors["train/rng"])
    fields = train_meta["history_fields"]
    history = [
        LossReport.from_fields(dict(zip(fields, row.tolist())))
        for row in tensors["train/history"]
    ]
    state = TrainState(
        iteration=int(train_meta["iteration"]),
        rng=rng,
        optimizers=optimizers,
        history=history,
    )
    return LoadedCheckpoint(bundle=bundle, state=state, config=config)
