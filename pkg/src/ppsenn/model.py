"""Model aggregate (backbone + prototype distributions) and checkpoint I/O.

Checkpoint layout, all integers little-endian:

    bytes 0..5   magic "PPSENN"
    u32          format version (currently 1)
    u32          header length in bytes
    header       JSON: backbone config, dataset metadata, array manifest
    payload      raw float64 little-endian blobs, manifest order

The manifest lists trainable parameters in declaration order followed by
non-trainable state (batch-norm running statistics).
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass

import numpy as np

from .prototypes import PointPrototypes, PrototypeDistribution
from .vae import AutoEncoder, BackboneConfig

CHECKPOINT_MAGIC = b"PPSENN"
CHECKPOINT_VERSION = 1

MODE_PROBABILISTIC = "probabilistic"
MODE_DETERMINISTIC = "deterministic-prototypes"


class CheckpointError(ValueError):
    pass


@dataclass
class ModelMeta:
    input_dim: int
    class_count: int
    image_shape: tuple | None = None
    mode: str = MODE_PROBABILISTIC


class Model:
    """Everything inference needs: e(.), g(.), and the per-class prototypes."""

    def __init__(self, backbone: AutoEncoder, prototypes, meta: ModelMeta):
        self.backbone = backbone
        self.prototypes = prototypes
        self.meta = meta

    @classmethod
    def build(cls, config: BackboneConfig, meta: ModelMeta, rng) -> "Model":
        backbone = AutoEncoder(config, meta.input_dim, rng)
        if meta.mode == MODE_DETERMINISTIC:
            protos = PointPrototypes(meta.class_count, config.latent_dim, rng)
        else:
            protos = [PrototypeDistribution(i, config.latent_dim, rng)
                      for i in range(meta.class_count)]
        return cls(backbone, protos, meta)

    @property
    def latent_dim(self) -> int:
        return self.backbone.config.latent_dim

    @property
    def class_count(self) -> int:
        return self.meta.class_count

    def is_probabilistic(self) -> bool:
        return self.meta.mode == MODE_PROBABILISTIC

    def parameters(self):
        params = list(self.backbone.parameters())
        if self.is_probabilistic():
            for dist in self.prototypes:
                params.extend(dist.parameters())
        else:
            params.extend(self.prototypes.parameters())
        return params

    def encode_np(self, x: np.ndarray) -> np.ndarray:
        return self.backbone.encode_np(x)

    def decode_np(self, z: np.ndarray) -> np.ndarray:
        return self.backbone.decode_np(z)

    def prototype_means(self) -> np.ndarray:
        if self.is_probabilistic():
            return np.vstack([d.mean.values for d in self.prototypes])
        return self.prototypes.rows.values.copy()

    def prototype_chols(self) -> np.ndarray:
        if not self.is_probabilistic():
            raise ValueError("point-prototype model has no covariance factors")
        return np.stack([d.chol_np() for d in self.prototypes])

    def checksum(self) -> str:
        h = hashlib.sha256()
        h.update(json.dumps(_header_dict(self)["config"], sort_keys=True).encode())
        for p in self.parameters():
            h.update(p.values.astype("<f8").tobytes())
        return h.hexdigest()


def _array_manifest(model: Model):
    arrays = [(f"param{i}", p.values) for i, p in enumerate(model.parameters())]
    arrays += model.backbone.state_arrays()
    return arrays


def _header_dict(model: Model):
    cfg = model.backbone.config
    return {
        "config": {
            "kind": cfg.kind,
            "hidden_sizes": list(cfg.hidden_sizes),
            "latent_dim": cfg.latent_dim,
            "variational": cfg.variational,
            "input_dim": model.meta.input_dim,
            "class_count": model.meta.class_count,
            "image_shape": list(model.meta.image_shape) if model.meta.image_shape else None,
            "mode": model.meta.mode,
        },
        "arrays": [[name, list(arr.shape)] for name, arr in _array_manifest(model)],
    }


def save_checkpoint(model: Model, path) -> None:
    header = json.dumps({"version": CHECKPOINT_VERSION, **_header_dict(model)},
                        sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(header)))
        fh.write(header)
        for _, arr in _array_manifest(model):
            fh.write(arr.astype("<f8").tobytes())


def load_checkpoint(path) -> Model:
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointError(f"bad checkpoint magic {magic!r}")
        version, header_len = struct.unpack("<II", fh.read(8))
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        header = json.loads(fh.read(header_len).decode())
        payload = fh.read()

    cfg_d = header["config"]
    config = BackboneConfig(kind=cfg_d["kind"], hidden_sizes=tuple(cfg_d["hidden_sizes"]),
                            latent_dim=cfg_d["latent_dim"], variational=cfg_d["variational"])
    image_shape = tuple(cfg_d["image_shape"]) if cfg_d["image_shape"] else None
    meta = ModelMeta(input_dim=cfg_d["input_dim"], class_count=cfg_d["class_count"],
                     image_shape=image_shape, mode=cfg_d["mode"])
    model = Model.build(config, meta, np.random.default_rng(0))

    arrays = _array_manifest(model)
    if len(arrays) != len(header["arrays"]):
        raise CheckpointError("array manifest mismatch")
    offset = 0
    for (name, arr), (want_name, want_shape) in zip(arrays, header["arrays"]):
        if name != want_name or list(arr.shape) != want_shape:
            raise CheckpointError(f"array {name} does not match manifest entry {want_name}")
        nbytes = arr.size * 8
        chunk = payload[offset:offset + nbytes]
        if len(chunk) != nbytes:
            raise CheckpointError(f"checkpoint truncated at array {name}")
        arr[...] = np.frombuffer(chunk, dtype="<f8").reshape(arr.shape)
        offset += nbytes
    if offset != len(payload):
        raise CheckpointError("trailing bytes after parameter payload")
    return model
