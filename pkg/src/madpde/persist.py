"""Deterministic binary checkpoints.

File layout (all integers little-endian):

    bytes 0..7    magic b"MADPDECP"
    bytes 8..11   format version, u32
    bytes 12..15  payload kind, u32
    then          sections, each a u64 byte length followed by payload
    trailing      blake2b-64 checksum of everything before it

Section 0 is a UTF-8 JSON record (sorted keys) describing the object
and the shapes of the array sections that follow; arrays are raw
little-endian f8 in C order.  Nothing here depends on wall-clock state,
so identical objects serialize to identical bytes.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass

import numpy as np

from madpde.network import NetworkConfig, NetworkWeights
from madpde.problems import ProblemInstance, instance_from_meta
from madpde.training import LatentBank, PretrainedModel

MAGIC = b"MADPDECP"
VERSION = 1

KIND_MODEL = 1
KIND_WEIGHTS = 2
KIND_BANK = 3
KIND_INSTANCES = 4

_CHECKSUM_BYTES = 8


class PersistError(Exception):
    pass


class CheckpointMissing(PersistError):
    pass


class ChecksumError(PersistError):
    pass


class VersionError(PersistError):
    pass


@dataclass
class WeightsCheckpoint:
    """Latent-free baseline artifact: weights plus their run manifest."""

    weights: NetworkWeights
    manifest: dict


def _checksum(payload: bytes) -> bytes:
    import hashlib

    return hashlib.blake2b(payload, digest_size=_CHECKSUM_BYTES).digest()


def _array_bytes(a: np.ndarray) -> bytes:
    if not np.all(np.isfinite(a)):
        raise PersistError("save: refusing to serialize non-finite values")
    return np.ascontiguousarray(a, dtype="<f8").tobytes()


def _weight_sections(weights: NetworkWeights):
    record = []
    arrays = []
    for i, (m, b) in enumerate(zip(weights.matrices, weights.biases)):
        record.append({"name": f"matrix_{i}", "shape": list(m.shape)})
        arrays.append(m)
        record.append({"name": f"bias_{i}", "shape": list(b.shape)})
        arrays.append(b)
    return record, arrays


def _bank_sections(bank: LatentBank):
    record = [{"name": "latents", "shape": list(bank.latents.shape)}]
    arrays = [bank.latents]
    if bank.descriptors is not None:
        record.append({"name": "descriptors",
                       "shape": list(bank.descriptors.shape)})
        arrays.append(bank.descriptors)
    return record, arrays


def _encode(kind: int, header: dict, arrays) -> bytes:
    try:
        doc = json.dumps(header, sort_keys=True, separators=(",", ":"),
                         allow_nan=False).encode("utf-8")
    except ValueError as e:
        raise PersistError(f"save: manifest is not serializable ({e})") from None
    sections = [doc] + [_array_bytes(a) for a in arrays]
    out = bytearray()
    out += MAGIC
    out += struct.pack("<II", VERSION, kind)
    for s in sections:
        out += struct.pack("<Q", len(s))
        out += s
    out += _checksum(bytes(out))
    return bytes(out)


def save(obj, path) -> None:
    """Serialize a model, weights checkpoint, bank, or instance set.

    The write is atomic: a temporary file in the target directory is
    renamed over the destination only after the full payload is out.
    """
    if isinstance(obj, PretrainedModel):
        w_rec, w_arr = _weight_sections(obj.weights)
        b_rec, b_arr = _bank_sections(obj.bank)
        header = {
            "kind": "model",
            "network": obj.weights.config.to_dict(),
            "family": obj.family,
            "manifest": obj.manifest,
            "arrays": w_rec + b_rec,
        }
        data = _encode(KIND_MODEL, header, w_arr + b_arr)
    elif isinstance(obj, WeightsCheckpoint):
        w_rec, w_arr = _weight_sections(obj.weights)
        header = {
            "kind": "weights",
            "network": obj.weights.config.to_dict(),
            "manifest": obj.manifest,
            "arrays": w_rec,
        }
        data = _encode(KIND_WEIGHTS, header, w_arr)
    elif isinstance(obj, LatentBank):
        b_rec, b_arr = _bank_sections(obj)
        header = {"kind": "bank", "arrays": b_rec}
        data = _encode(KIND_BANK, header, b_arr)
    elif isinstance(obj, ProblemInstance):
        header = {"kind": "instances", "single": True, "metas": [obj.meta],
                  "arrays": []}
        data = _encode(KIND_INSTANCES, header, [])
    elif isinstance(obj, (list, tuple)) and \
            all(isinstance(x, ProblemInstance) for x in obj):
        header = {"kind": "instances", "single": False,
                  "metas": [x.meta for x in obj], "arrays": []}
        data = _encode(KIND_INSTANCES, header, [])
    else:
        raise PersistError(f"save: unsupported object type {type(obj).__name__}")

    path = os.fspath(path)
    parent = os.path.dirname(path) or "."
    try:
        fd, tmp = tempfile.mkstemp(dir=parent, prefix=".ckpt-")
        try:
            with os.fdopen(fd, "wb") as f:
                f.write(data)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as e:
        raise PersistError(f"save: cannot write {path} ({e})") from None


def _read_sections(body: bytes, path: str):
    sections = []
    pos = 0
    while pos < len(body):
        if pos + 8 > len(body):
            raise ChecksumError(f"{path}: truncated section header")
        (length,) = struct.unpack_from("<Q", body, pos)
        pos += 8
        if pos + length > len(body):
            raise ChecksumError(f"{path}: truncated section payload")
        sections.append(body[pos:pos + length])
        pos += length
    return sections


def _rebuild_weights(header: dict, arrays) -> NetworkWeights:
    config = NetworkConfig.from_dict(header["network"])
    named = dict(arrays)
    count = len(config.layer_dims())
    matrices = [named[f"matrix_{i}"] for i in range(count)]
    biases = [named[f"bias_{i}"] for i in range(count)]
    return NetworkWeights(config, matrices, biases)


def load(path):
    """Inverse of save; the returned object matches the saved type
    (instance sets come back through their family rebuilders)."""
    path = os.fspath(path)
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except FileNotFoundError:
        raise CheckpointMissing(f"no checkpoint at {path}") from None
    except OSError as e:
        raise PersistError(f"load: cannot read {path} ({e})") from None

    if len(raw) < len(MAGIC) + 8 + _CHECKSUM_BYTES:
        raise ChecksumError(f"{path}: file too short to be a checkpoint")
    if raw[:len(MAGIC)] != MAGIC:
        raise PersistError(f"{path}: bad magic; not a checkpoint file")
    version, kind = struct.unpack_from("<II", raw, len(MAGIC))
    if version != VERSION:
        raise VersionError(
            f"{path}: format version {version} is not supported "
            f"(this build reads version {VERSION})")
    if _checksum(raw[:-_CHECKSUM_BYTES]) != raw[-_CHECKSUM_BYTES:]:
        raise ChecksumError(f"{path}: checksum mismatch; file is corrupted")

    body = raw[len(MAGIC) + 8:-_CHECKSUM_BYTES]
    sections = _read_sections(body, path)
    if not sections:
        raise ChecksumError(f"{path}: missing header section")
    try:
        header = json.loads(sections[0].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ChecksumError(f"{path}: unreadable header ({e})") from None

    specs = header.get("arrays", [])
    if len(specs) != len(sections) - 1:
        raise ChecksumError(f"{path}: section count disagrees with header")
    arrays = []
    for spec, payload in zip(specs, sections[1:]):
        shape = tuple(spec["shape"])
        want = int(np.prod(shape, dtype=np.int64)) * 8 if shape else 8
        if len(payload) != want:
            raise ChecksumError(f"{path}: array {spec['name']} has wrong size")
        arr = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(shape)
        arrays.append((spec["name"], arr))

    if kind == KIND_MODEL:
        weights = _rebuild_weights(header, arrays)
        named = dict(arrays)
        bank = LatentBank(named["latents"], named.get("descriptors"))
        return PretrainedModel(weights=weights, bank=bank,
                               family=header["family"],
                               manifest=header["manifest"])
    if kind == KIND_WEIGHTS:
        return WeightsCheckpoint(weights=_rebuild_weights(header, arrays),
                                 manifest=header["manifest"])
    if kind == KIND_BANK:
        named = dict(arrays)
        return LatentBank(named["latents"], named.get("descriptors"))
    if kind == KIND_INSTANCES:
        insts = [instance_from_meta(m) for m in header["metas"]]
        return insts[0] if header.get("single") else insts
    raise PersistError(f"{path}: unknown payload kind {kind}")
