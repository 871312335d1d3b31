import json
import struct

import pytest
import torch

from compositegan.config import TrainConfig
from compositegan.data import DatasetSpec, load_dataset
from compositegan.errors import CheckpointError
from compositegan.nets import ModelBundle, Variant
from compositegan.persist import MAGIC, load_checkpoint, save_checkpoint
from compositegan.trainer import fit, initialize


def tiny_config(**kwargs):
    base = dict(
        variant=Variant.CGAN_A,
        n=2,
        m=4,
        latent_dim=6,
        hidden_dim=10,
        image_size=16,
        base_channels=2,
        iterations=2,
        seed=0,
    )
    base.update(kwargs)
    return TrainConfig(**base)


@pytest.fixture(scope="module")
def dataset():
    return load_dataset(DatasetSpec(source="synthetic", resolution=16, synthetic_count=10))


def bitwise_equal(a: ModelBundle, b: ModelBundle) -> bool:
    sa, sb = a.state_dict(), b.state_dict()
    return set(sa) == set(sb) and all(torch.equal(sa[k], sb[k]) for k in sa)


class TestBundleRoundtrip:
    def test_parameters_come_back_bitwise(self, tmp_path):
        bundle = ModelBundle.create(
            seed=3, n=2, latent_dim=6, hidden_dim=10, image_size=16, base_channels=2,
            variant=Variant.CGAN_VAE_A,
        )
        path = tmp_path / "ckpt"
        save_checkpoint(path, bundle)
        loaded = load_checkpoint(path)
        assert loaded.state is None and loaded.config is None
        assert bitwise_equal(bundle, loaded.bundle)
        assert loaded.bundle.metadata() == bundle.metadata()

    def test_state_requires_config(self, tmp_path, dataset):
        cfg = tiny_config()
        bundle, state = initialize(cfg)
        with pytest.raises(ValueError):
            save_checkpoint(tmp_path / "x", bundle, state=state)


class TestTrainStateRoundtrip:
    def test_full_state_roundtrip(self, tmp_path, dataset):
        cfg = tiny_config(iterations=3)
        bundle, state = fit(cfg, dataset)
        path = tmp_path / "ckpt"
        save_checkpoint(path, bundle, state=state, config=cfg)
        loaded = load_checkpoint(path)
        assert loaded.config == cfg
        assert loaded.state.iteration == 3
        assert [r.fields() for r in loaded.state.history] == [r.fields() for r in state.history]
        assert torch.equal(loaded.state.rng.get_state(), state.rng.get_state())
        for name, opt in state.optimizers.items():
            restored = loaded.state.optimizers[name]
            for p_old, p_new in zip(
                opt.param_groups[0]["params"], restored.param_groups[0]["params"]
            ):
                st_old, st_new = opt.state.get(p_old), restored.state.get(p_new)
                assert (st_old is None) == (st_new is None)
                if st_old:
                    assert torch.equal(st_old["exp_avg"], st_new["exp_avg"])
                    assert torch.equal(st_old["exp_avg_sq"], st_new["exp_avg_sq"])
                    assert float(st_old["step"]) == float(st_new["step"])

    def test_resumed_training_matches_uninterrupted(self, tmp_path, dataset):
        full_cfg = tiny_config(iterations=5, seed=17)
        b_full, s_full = fit(full_cfg, dataset)

        half_cfg = tiny_config(iterations=2, seed=17)
        b_half, s_half = fit(half_cfg, dataset)
        path = tmp_path / "ckpt"
        save_checkpoint(path, b_half, state=s_half, config=half_cfg)
        loaded = load_checkpoint(path)
        rest_cfg = tiny_config(iterations=5, seed=17)
        b_res, s_res = fit(rest_cfg, dataset, bundle=loaded.bundle, state=loaded.state)

        assert bitwise_equal(b_full, b_res)
        assert [r.fields() for r in s_full.history] == [r.fields() for r in s_res.history]

    def test_sampling_after_roundtrip_is_bitwise(self, tmp_path, dataset):
        from compositegan.nets import sample_prior

        cfg = tiny_config(iterations=2)
        bundle, state = fit(cfg, dataset)
        path = tmp_path / "ckpt"
        save_checkpoint(path, bundle, state=state, config=cfg)
        loaded = load_checkpoint(path)

        def sample(b):
            b.eval()
            g = torch.Generator().manual_seed(99)
            zs = [sample_prior(3, cfg.latent_dim, g, b.dtype) for _ in range(cfg.n)]
            with torch.no_grad():
                return b.forward_generate(zs)[1].rgb
        assert torch.equal(sample(bundle), sample(loaded.bundle))


class TestRejection:
    def _save_tiny(self, tmp_path):
        bundle = ModelBundle.create(
            seed=1, n=2, latent_dim=6, hidden_dim=10, image_size=16, base_channels=2,
        )
        path = tmp_path / "ckpt"
        save_checkpoint(path, bundle)
        return path

    def test_wrong_magic(self, tmp_path):
        path = tmp_path / "bad"
        path.write_bytes(b"NOTACKPT" + b"\x00" * 64)
        with pytest.raises(CheckpointError, match="not a checkpoint"):
            load_checkpoint(path)

    def test_truncated_file(self, tmp_path):
        path = self._save_tiny(tmp_path)
        raw = path.read_bytes()
        (tmp_path / "trunc").write_bytes(raw[: len(raw) - 200])
        with pytest.raises(CheckpointError, match="truncated"):
            load_checkpoint(tmp_path / "trunc")

    def test_metadata_mismatch_rejected(self, tmp_path):
        path = self._save_tiny(tmp_path)
        raw = path.read_bytes()
        hlen = struct.unpack("<Q", raw[len(MAGIC) : len(MAGIC) + 8])[0]
        start = len(MAGIC) + 8
        header = json.loads(raw[start : start + hlen].decode())
        header["arch"]["n"] = 3  # claims one more generator than the payload has
        new_header = json.dumps(header, sort_keys=True).encode()
        forged = MAGIC + struct.pack("<Q", len(new_header)) + new_header + raw[start + hlen :]
        (tmp_path / "forged").write_bytes(forged)
        with pytest.raises(CheckpointError, match="does not match declared architecture"):
            load_checkpoint(tmp_path / "forged")

    def test_corrupt_header_rejected(self, tmp_path):
        path = self._save_tiny(tmp_path)
        raw = bytearray(path.read_bytes())
        raw[len(MAGIC) + 8] = 0xFF  # stomp the first header byte
        (tmp_path / "corrupt").write_bytes(bytes(raw))
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "corrupt")

    def test_shape_mismatch_rejected(self, tmp_path):
        path = self._save_tiny(tmp_path)
        raw = path.read_bytes()
        hlen = struct.unpack("<Q", raw[len(MAGIC) : len(MAGIC) + 8])[0]
        start = len(MAGIC) + 8
        header = json.loads(raw[start : start + hlen].decode())
        # swap the declared shape of one tensor without touching its bytes
        entry = next(e for e in header["tensors"] if e["shape"] and len(e["shape"]) == 2)
        entry["shape"] = [entry["shape"][1], entry["shape"][0]]
        new_header = json.dumps(header, sort_keys=True).encode()
        forged = MAGIC + struct.pack("<Q", len(new_header)) + new_header + raw[start + hlen :]
        (tmp_path / "reshaped").write_bytes(forged)
        with pytest.raises(CheckpointError, match="shape"):
            load_checkpoint(tmp_path / "reshaped")
