"""Encoder + classifier head and their parameter container.

The encoder stacks three same-padding 3x3 stride-1 convolutions, six
valid 5x5 stride-2 convolutions, and a per-position linear channel map
whose output is the embedding (3x3x256 at the default 400x400 input,
no activation). The head flattens the embedding, projects it to the MLP
width, applies three identity-skip residual dense blocks, and ends in a
softmax over families. Leaky-relu and dropout follow every convolution
and every residual block; the embedding layer and the softmax are never
followed by dropout.

Parameters are named float tensors; a student and a teacher differ only
by role tag. Checkpoints store every tensor as little-endian float32 in
a small documented container with a JSON sidecar.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import BadConfig, CheckpointMismatch, ShapeMismatch
from .nn import (
    Conv2D,
    Dense,
    Dropout,
    Flatten,
    Layer,
    LeakyReLU,
    PointwiseDense,
    ResBlock,
    run_backward,
    run_forward,
    softmax,
)

CHECKPOINT_MAGIC = b"BNCK"
SAME_KERNEL = 3
VALID_KERNEL = 5
VALID_STRIDE = 2


def _valid_out(n: int) -> int:
    return (n - VALID_KERNEL) // VALID_STRIDE + 1


@dataclass
class ModelConfig:
    """Architecture plan; defaults give the full-scale 400px, 61-family net."""

    input_size: int = 400
    families: int = 61
    dropout_rate: float = 0.2
    leaky_slope: float = 0.01
    same_channels: tuple[int, ...] = (32, 64, 128)
    valid_channels: tuple[int, ...] = (128, 128, 256, 256, 256, 256)
    embed_channels: int = 256
    mlp_width: int = 128
    mlp_blocks: int = 3

    def __post_init__(self) -> None:
        self.same_channels = tuple(int(c) for c in self.same_channels)
        self.valid_channels = tuple(int(c) for c in self.valid_channels)
        if self.families < 2:
            raise BadConfig(f"families must be >= 2, got {self.families}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise BadConfig(f"dropout_rate must be in [0,1), got {self.dropout_rate}")
        if self.leaky_slope < 0:
            raise BadConfig(f"leaky_slope must be >= 0, got {self.leaky_slope}")
        if min(self.same_channels, default=1) < 1 or min(self.valid_channels, default=1) < 1:
            raise BadConfig("channel counts must be positive")
        if self.embed_channels < 1 or self.mlp_width < 1 or self.mlp_blocks < 0:
            raise BadConfig("embed_channels/mlp_width must be >= 1 and mlp_blocks >= 0")
        self.spatial_chain()  # raises BadConfig when the conv plan underflows

    def spatial_chain(self) -> list[int]:
        """Spatial size after the input and after each convolution.

        Same-padding convolutions preserve the size; each valid convolution
        maps n to floor((n-5)/2)+1 and needs n >= 5.
        """
        if self.input_size < 1:
            raise BadConfig(f"input_size must be >= 1, got {self.input_size}")
        chain = [self.input_size] * (len(self.same_channels) + 1)
        n = self.input_size
        for i in range(len(self.valid_channels)):
            if n < VALID_KERNEL:
                raise BadConfig(
                    f"input_size {self.input_size}: spatial size {n} before valid conv "
                    f"{i} is smaller than the {VALID_KERNEL}px kernel"
                )
            n = _valid_out(n)
            chain.append(n)
        return chain

    @property
    def embedding_shape(self) -> tuple[int, int, int]:
        """(height, width, channels) of the encoder output."""
        s = self.spatial_chain()[-1]
        return (s, s, self.embed_channels)

    @property
    def flat_dim(self) -> int:
        h, w, c = self.embedding_shape
        return h * w * c

    def to_dict(self) -> dict:
        return {
            "input_size": self.input_size,
            "families": self.families,
            "dropout_rate": self.dropout_rate,
            "leaky_slope": self.leaky_slope,
            "same_channels": list(self.same_channels),
            "valid_channels": list(self.valid_channels),
            "embed_channels": self.embed_channels,
            "mlp_width": self.mlp_width,
            "mlp_blocks": self.mlp_blocks,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        kwargs = dict(data)
        for key in ("same_channels", "valid_channels"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)


class ModelParams:
    """Named parameter tensors bound into layer objects, plus a role tag."""

    def __init__(self, config: ModelConfig, role: str, rng: np.random.Generator, dtype=np.float32):
        if role not in ("student", "teacher"):
            raise BadConfig(f"role must be student or teacher, got {role!r}")
        self.config = config
        self.role = role
        self.dtype = np.dtype(dtype)
        self.encoder_layers: list[Layer] = []
        self.head_layers: list[Layer] = []
        self._build(rng)

    # -- construction ------------------------------------------------------

    def _he(self, rng, shape, fan_in):
        scale = np.sqrt(2.0 / fan_in)
        return (rng.standard_normal(shape) * scale).astype(self.dtype)

    def _zeros(self, shape):
        return np.zeros(shape, dtype=self.dtype)

    def _build(self, rng: np.random.Generator) -> None:
        cfg = self.config
        enc: list[Layer] = []
        c_in = 1
        idx = 0
        for c_out in cfg.same_channels:
            w = self._he(rng, (c_out, c_in, SAME_KERNEL, SAME_KERNEL), c_in * SAME_KERNEL**2)
            enc.append(Conv2D(f"conv_{idx:02d}", w, self._zeros(c_out), stride=1, pad=(SAME_KERNEL - 1) // 2))
            enc.append(LeakyReLU(f"conv_{idx:02d}/act", cfg.leaky_slope))
            enc.append(Dropout(f"conv_{idx:02d}/drop", cfg.dropout_rate))
            c_in = c_out
            idx += 1
        for c_out in cfg.valid_channels:
            w = self._he(rng, (c_out, c_in, VALID_KERNEL, VALID_KERNEL), c_in * VALID_KERNEL**2)
            enc.append(Conv2D(f"conv_{idx:02d}", w, self._zeros(c_out), stride=VALID_STRIDE, pad=0))
            enc.append(LeakyReLU(f"conv_{idx:02d}/act", cfg.leaky_slope))
            enc.append(Dropout(f"conv_{idx:02d}/drop", cfg.dropout_rate))
            c_in = c_out
            idx += 1
        # Linear embedding layer: per-position channel map, no activation,
        # no dropout, so eval-mode teachers emit deterministic targets.
        enc.append(
            PointwiseDense("embed", self._he(rng, (c_in, cfg.embed_channels), c_in), self._zeros(cfg.embed_channels))
        )
        self.encoder_layers = enc

        head: list[Layer] = [Flatten("flatten")]
        head.append(
            Dense("proj", self._he(rng, (cfg.flat_dim, cfg.mlp_width), cfg.flat_dim), self._zeros(cfg.mlp_width))
        )
        for k in range(cfg.mlp_blocks):
            head.append(
                ResBlock(
                    f"block_{k}",
                    self._he(rng, (cfg.mlp_width, cfg.mlp_width), cfg.mlp_width),
                    self._zeros(cfg.mlp_width),
                    cfg.leaky_slope,
                    cfg.dropout_rate,
                )
            )
        head.append(
            Dense("fc_out", self._he(rng, (cfg.mlp_width, cfg.families), cfg.mlp_width), self._zeros(cfg.families))
        )
        self.head_layers = head

    # -- tensor access -----------------------------------------------------

    def _all_layers(self) -> list[Layer]:
        return self.encoder_layers + self.head_layers

    def tensors(self) -> dict[str, np.ndarray]:
        """Ordered name -> array view of every parameter (no copies)."""
        out: dict[str, np.ndarray] = {}
        for layer in self._all_layers():
            out.update(layer.params())
        return out

    def grad_tensors(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for layer in self._all_layers():
            out.update(layer.grads())
        return out

    def set_tensors(self, source: dict[str, np.ndarray]) -> None:
        """Copy values into the existing arrays; names and shapes must match."""
        own = self.tensors()
        if list(own.keys()) != list(source.keys()):
            missing = set(own) ^ set(source)
            raise CheckpointMismatch(f"tensor name mismatch: {sorted(missing)[:4]}")
        for name, arr in own.items():
            src = source[name]
            if arr.shape != src.shape:
                raise CheckpointMismatch(f"{name}: shape {src.shape} != expected {arr.shape}")
            arr[...] = src.astype(self.dtype, copy=False)

    def copy(self, role: str | None = None) -> "ModelParams":
        """Deep copy, optionally retagged (used to spawn the teacher)."""
        clone = ModelParams(self.config, role or self.role, np.random.default_rng(0), self.dtype)
        clone.set_tensors({k: v.copy() for k, v in self.tensors().items()})
        return clone

    def structure(self) -> list[tuple[str, tuple[int, ...]]]:
        return [(name, arr.shape) for name, arr in self.tensors().items()]


def init_model(
    config: ModelConfig, seed: int, role: str = "student", dtype=np.float32
) -> ModelParams:
    """Build a model with fan-in-scaled normal weights and zero biases."""
    return ModelParams(config, role, np.random.default_rng(seed), dtype)


# ----------------------------------------------------------------------------
# Forward / backward
# ----------------------------------------------------------------------------


def _as_batch(image: np.ndarray) -> tuple[np.ndarray, bool]:
    if image.ndim == 2:
        return image[None], True
    if image.ndim == 3:
        return image, False
    raise ShapeMismatch(f"expected (h, w) or (n, h, w) images, got {image.shape}")


def encoder_forward(
    params: ModelParams, image: np.ndarray, mode: str = "eval", rng: np.random.Generator | None = None
) -> np.ndarray:
    """Run the conv stack; returns embeddings shaped (h, w, c) per sample.

    Train mode enables dropout (rng required when the rate is nonzero) and
    caches activations for a subsequent backward pass.
    """
    batch, single = _as_batch(image)
    size = params.config.input_size
    if batch.shape[1:] != (size, size):
        raise ShapeMismatch(f"expected {size}x{size} images, got {batch.shape[1:]}")
    train = _check_mode(mode)
    x = batch.astype(params.dtype, copy=False)[:, None]  # (n, 1, h, w)
    out = run_forward(params.encoder_layers, x, train, rng)
    out = np.transpose(out, (0, 2, 3, 1))  # (n, h, w, c)
    return out[0] if single else out


def head_forward(
    params: ModelParams, embedding: np.ndarray, mode: str = "eval", rng: np.random.Generator | None = None
) -> np.ndarray:
    """Run the MLP head on (h, w, c) embeddings; returns softmax probabilities."""
    want = params.config.embedding_shape
    emb, single = (embedding[None], True) if embedding.ndim == 3 else (embedding, False)
    if emb.ndim != 4 or emb.shape[1:] != want:
        raise ShapeMismatch(f"expected embeddings shaped {want}, got {embedding.shape}")
    train = _check_mode(mode)
    logits = run_forward(params.head_layers, emb.astype(params.dtype, copy=False), train, rng)
    probs = softmax(logits)
    return probs[0] if single else probs


def _check_mode(mode: str) -> bool:
    if mode not in ("train", "eval"):
        raise BadConfig(f"mode must be train or eval, got {mode!r}")
    return mode == "train"


def head_backward(params: ModelParams, dlogits: np.ndarray) -> np.ndarray:
    """Backprop the head from logit gradients; returns (n, h, w, c) embedding grads."""
    demb = run_backward(params.head_layers, dlogits)
    return demb


def encoder_backward(params: ModelParams, dembedding: np.ndarray) -> None:
    """Backprop the encoder from (n, h, w, c) embedding gradients."""
    run_backward(params.encoder_layers, np.transpose(dembedding, (0, 3, 1, 2)))


def predict(params: ModelParams, image: np.ndarray) -> np.ndarray | int:
    """Eval-mode class prediction; argmax ties break toward the lowest index."""
    batch, single = _as_batch(image)
    probs = head_forward(params, encoder_forward(params, batch, "eval"), "eval")
    ids = np.argmax(probs, axis=1)
    return int(ids[0]) if single else ids


# ----------------------------------------------------------------------------
# Checkpoint container: magic, tensor count, then per tensor a name, dims,
# and little-endian float32 payload. A JSON sidecar (same path + ".json")
# carries the config and any run metadata.
# ----------------------------------------------------------------------------


def write_tensors(path, tensors: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors.items():
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.astype("<f4").tobytes(order="C"))


def read_tensors(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointMismatch(f"{path}: bad magic {magic!r}")
        (count,) = struct.unpack("<I", fh.read(4))
        out: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", fh.read(2))
            name = fh.read(name_len).decode("utf-8")
            (ndim,) = struct.unpack("<B", fh.read(1))
            shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
            n_bytes = 4 * int(np.prod(shape, dtype=np.int64)) if ndim else 4
            payload = fh.read(n_bytes)
            if len(payload) != n_bytes:
                raise CheckpointMismatch(f"{path}: truncated tensor {name!r}")
            out[name] = np.frombuffer(payload, dtype="<f4").reshape(shape).copy()
    return out


def save_checkpoint(path, tensors: dict[str, np.ndarray], meta: dict) -> None:
    """Write the tensor container plus a JSON sidecar of run metadata."""
    write_tensors(path, tensors)
    sidecar = Path(str(path) + ".json")
    with open(sidecar, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    tensors = read_tensors(path)
    sidecar = Path(str(path) + ".json")
    if not sidecar.is_file():
        raise CheckpointMismatch(f"missing checkpoint sidecar {sidecar}")
    with open(sidecar, encoding="utf-8") as fh:
        meta = json.load(fh)
    return tensors, meta


def load_params(path, config: ModelConfig, role: str = "student", dtype=np.float32) -> ModelParams:
    """Load a model checkpoint written for exactly this config."""
    tensors, meta = load_checkpoint(path)
    stored = meta.get("model_config")
    if stored is not None and stored != config.to_dict():
        raise CheckpointMismatch(
            f"checkpoint config {stored} does not match requested {config.to_dict()}"
        )
    prefix = f"{role}/"
    scoped = {k[len(prefix) :]: v for k, v in tensors.items() if k.startswith(prefix)}
    if not scoped:  # single-model checkpoints store bare names
        scoped = tensors
    params = init_model(config, seed=0, role=role, dtype=dtype)
    params.set_tensors(scoped)
    return params


__all__ = [
    "ModelConfig",
    "ModelParams",
    "init_model",
    "encoder_forward",
    "head_forward",
    "head_backward",
    "encoder_backward",
    "predict",
    "write_tensors",
    "read_tensors",
    "save_checkpoint",
    "load_checkpoint",
    "load_params",
]
