"""Checkpoint container tests: round trips, corruption, determinism."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from madpde import persist
from madpde.network import NetworkConfig, init_weights
from madpde.problems import (
    BURGERS_U0_SPEC,
    burgers_instance,
    grf_sample,
    ode_instance,
)
from madpde.training import LatentBank, PretrainedModel, TrainConfig


def _model(seed=0, latent_dim=2, count=4):
    net = NetworkConfig(spatial_dim=1, latent_dim=latent_dim, depth=3, width=8)
    rng = np.random.default_rng(seed)
    weights = init_weights(net, rng)
    bank = LatentBank(rng.normal(size=(count, latent_dim)),
                      rng.normal(size=(count, 1)))
    manifest = {"train_config": TrainConfig(iterations=3).to_dict(),
                "task_count": count}
    return PretrainedModel(weights=weights, bank=bank, family="ode",
                           manifest=manifest)


def test_model_round_trip_bit_exact(tmp_path):
    model = _model()
    path = tmp_path / "model.ckpt"
    persist.save(model, path)
    back = persist.load(path)
    assert back.weights.theta_bytes() == model.weights.theta_bytes()
    assert back.bank.latents.tobytes() == model.bank.latents.tobytes()
    assert back.bank.descriptors.tobytes() == model.bank.descriptors.tobytes()
    assert back.family == model.family
    assert back.manifest == model.manifest
    assert back.weights.config == model.weights.config


def test_save_is_deterministic(tmp_path):
    a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    persist.save(_model(), a)
    persist.save(_model(), b)
    assert a.read_bytes() == b.read_bytes()


def test_weights_checkpoint_round_trip(tmp_path):
    net = NetworkConfig(spatial_dim=1, latent_dim=0, depth=4, width=8)
    ckpt = persist.WeightsCheckpoint(
        weights=init_weights(net, np.random.default_rng(1)),
        manifest={"seed": 5})
    path = tmp_path / "w.ckpt"
    persist.save(ckpt, path)
    back = persist.load(path)
    assert isinstance(back, persist.WeightsCheckpoint)
    assert back.weights.theta_bytes() == ckpt.weights.theta_bytes()
    assert back.manifest == {"seed": 5}


def test_bank_round_trip_without_descriptors(tmp_path):
    bank = LatentBank(np.random.default_rng(2).normal(size=(5, 3)))
    path = tmp_path / "bank.ckpt"
    persist.save(bank, path)
    back = persist.load(path)
    assert isinstance(back, LatentBank)
    assert back.latents.tobytes() == bank.latents.tobytes()
    assert back.descriptors is None


def test_instance_set_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    insts = [ode_instance(0.4),
             burgers_instance(grf_sample(BURGERS_U0_SPEC, rng), 0.02)]
    path = tmp_path / "tasks.ckpt"
    persist.save(insts, path)
    back = persist.load(path)
    assert [b.meta for b in back] == [i.meta for i in insts]

    single = tmp_path / "one.ckpt"
    persist.save(insts[0], single)
    one = persist.load(single)
    assert one.meta == insts[0].meta


def test_corrupted_byte_fails_checksum(tmp_path):
    path = tmp_path / "model.ckpt"
    persist.save(_model(), path)
    raw = bytearray(path.read_bytes())
    raw[len(raw) // 2] ^= 0xFF
    path.write_bytes(bytes(raw))
    with pytest.raises(persist.ChecksumError):
        persist.load(path)


def test_version_bump_fails_with_version_message(tmp_path):
    path = tmp_path / "model.ckpt"
    persist.save(_model(), path)
    raw = bytearray(path.read_bytes())
    raw[8] = 99
    path.write_bytes(bytes(raw))
    with pytest.raises(persist.VersionError, match="version 99"):
        persist.load(path)


def test_bad_magic_and_missing_file(tmp_path):
    missing = tmp_path / "nothing.ckpt"
    with pytest.raises(persist.CheckpointMissing):
        persist.load(missing)
    junk = tmp_path / "junk.ckpt"
    junk.write_bytes(b"NOTMINE!" + b"\x00" * 32)
    with pytest.raises(persist.PersistError):
        persist.load(junk)


def test_non_finite_rejected(tmp_path):
    model = _model()
    model.weights.matrices[0][0, 0] = np.nan
    with pytest.raises(persist.PersistError):
        persist.save(model, tmp_path / "bad.ckpt")
    assert list(tmp_path.iterdir()) == []


def test_unwritable_destination(tmp_path):
    with pytest.raises(persist.PersistError):
        persist.save(_model(), tmp_path / "no" / "such" / "dir.ckpt")


@settings(max_examples=20, deadline=None)
@given(st.data())
def test_random_payload_round_trip(data):
    import tempfile

    rng = np.random.default_rng(data.draw(st.integers(0, 2 ** 31)))
    latent = data.draw(st.integers(0, 3))
    depth = data.draw(st.integers(2, 4))
    width = data.draw(st.integers(1, 6))
    count = data.draw(st.integers(1, 5))
    net = NetworkConfig(spatial_dim=1, latent_dim=latent, depth=depth,
                        width=width)
    model = PretrainedModel(
        weights=init_weights(net, rng),
        bank=LatentBank(rng.normal(size=(count, latent))),
        family="ode",
        manifest={"note": data.draw(st.text(max_size=20))},
    )
    with tempfile.TemporaryDirectory() as d:
        path = f"{d}/m.ckpt"
        persist.save(model, path)
        back = persist.load(path)
    assert back.weights.theta_bytes() == model.weights.theta_bytes()
    assert back.bank.latents.tobytes() == model.bank.latents.tobytes()
    assert back.manifest == model.manifest
