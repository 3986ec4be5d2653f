"""Autoencoder training, decoder extraction and generator weight files.

Weight file layout (little-endian)::

    b"MLPGEN"                      6-byte magic
    u16 version                    currently 1
    u32 n                          length of the metadata block
    n bytes                        canonical UTF-8 JSON: dims, activations, id, manifest
    per layer: weight (out*in f64, row-major) then bias (out f64)
    8 bytes                        BLAKE2b-64 digest of everything above
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import LabeledDataset, RNG_ALGORITHM, step_batches
from .exceptions import (ChecksumError, FormatError, TrainingError, TruncationError,
                         UsageError, VersionError)
from .network import LOSS_KINDS, Layer, MlpGenerator, forward, grad_params
from .optim import AdamState, _adam_update

MAGIC = b"MLPGEN"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<6sHI")


@dataclass
class TrainConfig:
    steps: int = 20000
    batch_size: int = 256
    learning_rate: float = 0.01
    weight_init_seed: int = 0
    data_order_seed: int = 0
    loss_kind: str = "L2"
    hidden: tuple = (64, 32)
    log_every: int = 100

    def validate(self):
        if self.steps < 1:
            raise UsageError("steps must be >= 1")
        if self.batch_size < 1:
            raise UsageError("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise UsageError("learning_rate must be positive")
        if self.loss_kind not in LOSS_KINDS:
            raise UsageError(f"loss_kind must be one of {LOSS_KINDS}")
        return self


@dataclass
class Autoencoder:
    encoder: MlpGenerator
    decoder: MlpGenerator
    manifest: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.encoder.output_dim != self.decoder.input_dim:
            raise UsageError("encoder output and decoder input widths differ")

    def encode(self, x):
        return forward(self.encoder, x)

    def decode(self, z):
        return forward(self.decoder, z)

    def reconstruct(self, x):
        return self.decode(self.encode(x))


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def manifest_hash(manifest: dict) -> str:
    return hashlib.sha256(canonical_json(manifest).encode()).hexdigest()


def weight_init(dims, seed, activation="sigmoid", id="generator") -> MlpGenerator:
    """Glorot-uniform weights in ``±sqrt(6 / (fan_in + fan_out))``, zero biases."""
    dims = [int(d) for d in dims]
    if len(dims) < 2 or min(dims) < 1:
        raise UsageError(f"invalid dimension chain {dims}")
    rng = np.random.default_rng(seed)
    layers = []
    for fan_in, fan_out in zip(dims, dims[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        layers.append(Layer(w, np.zeros(fan_out), activation))
    return MlpGenerator(tuple(layers), id=id)


def autoencoder_dims(n_pixels: int, hidden=(64, 32)) -> list:
    hidden = list(hidden)
    return [n_pixels] + hidden + hidden[-2::-1] + [n_pixels]


def train_autoencoder(ds: LabeledDataset, cfg: TrainConfig) -> Autoencoder:
    """Train a symmetric sigmoid autoencoder with Adam on mini-batches."""
    cfg.validate()
    if len(ds) == 0:
        raise UsageError("cannot train on an empty dataset")
    x_all = ds.images
    dims = autoencoder_dims(x_all.shape[1], cfg.hidden)
    net = weight_init(dims, cfg.weight_init_seed, id="autoencoder")
    theta = net.flat_params()
    state = AdamState.zeros_like(theta, lr=cfg.learning_rate)
    curve = []
    loss = float("nan")
    for step, idx in enumerate(step_batches(len(ds), cfg.batch_size, cfg.data_order_seed, cfg.steps)):
        batch = x_all[idx]
        loss, grads = grad_params(net, batch, batch, cfg.loss_kind)
        if not np.isfinite(loss) or not grads.all_finite():
            raise TrainingError(f"training diverged at step {step}", step=step)
        theta = _adam_update(state, theta, grads.flat())
        net = net.with_flat_params(theta)
        if step % cfg.log_every == 0:
            curve.append([step, loss])

    n_enc = len(cfg.hidden)
    recon = forward(net, x_all)
    manifest = {
        "dataset": ds.description,
        "dataset_size": len(ds),
        "config": {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(cfg).items()},
        "dims": dims,
        "rng": RNG_ALGORITHM,
        "final_batch_loss": float(loss),
        "final_loss": float(np.mean((recon - x_all) ** 2)),
        "loss_curve": curve,
    }
    mhash = manifest_hash(manifest)[:16]
    encoder = MlpGenerator(net.layers[:n_enc], id=f"encoder-{mhash}")
    decoder = MlpGenerator(net.layers[n_enc:], id=f"decoder-{mhash}")
    return Autoencoder(encoder, decoder, manifest)


def extract_decoder(ae: Autoencoder) -> MlpGenerator:
    """The frozen decoder, tagged with the training manifest hash."""
    return ae.decoder.with_id(f"decoder-{manifest_hash(ae.manifest)[:16]}")


# ---------------------------------------------------------------------------
# weight files
# ---------------------------------------------------------------------------

def generator_bytes(gen: MlpGenerator, manifest=None) -> bytes:
    meta = canonical_json({
        "dims": list(gen.dims),
        "activations": list(gen.activations),
        "id": gen.id,
        "manifest": manifest or {},
    }).encode("utf-8")
    parts = [_HEADER.pack(MAGIC, FORMAT_VERSION, len(meta)), meta]
    for layer in gen.layers:
        parts.append(layer.weight.astype("<f8").tobytes())
        parts.append(layer.bias.astype("<f8").tobytes())
    body = b"".join(parts)
    return body + hashlib.blake2b(body, digest_size=8).digest()


def parse_generator_bytes(raw: bytes):
    if len(raw) < _HEADER.size:
        raise TruncationError(f"weight file too short ({len(raw)} bytes)")
    magic, version, meta_len = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError("not a generator weight file (bad magic)")
    if version != FORMAT_VERSION:
        raise VersionError(f"unsupported weight file version {version}")
    start = _HEADER.size
    if len(raw) < start + meta_len:
        raise TruncationError("weight file truncated inside the metadata block")
    body_ok = (len(raw) >= 8 and
               hashlib.blake2b(raw[:-8], digest_size=8).digest() == raw[-8:])
    try:
        meta = json.loads(raw[start:start + meta_len].decode("utf-8"))
        dims, acts = meta["dims"], meta["activations"]
    except (ValueError, KeyError) as exc:
        if not body_ok:
            raise ChecksumError("weight file checksum mismatch") from exc
        raise FormatError(f"malformed metadata: {exc}") from exc
    n_vals = sum(o * (i + 1) for i, o in zip(dims, dims[1:]))
    expected = start + meta_len + 8 * n_vals + 8
    if len(raw) < expected:
        raise TruncationError(f"weight file truncated: {len(raw)} of {expected} bytes")
    if len(raw) > expected:
        raise FormatError(f"{len(raw) - expected} trailing bytes after the checksum")
    if not body_ok:
        raise ChecksumError("weight file checksum mismatch")
    vals = np.frombuffer(raw, dtype="<f8", count=n_vals, offset=start + meta_len).astype(np.float64)
    layers, pos = [], 0
    for i, o, act in zip(dims, dims[1:], acts):
        w = vals[pos:pos + o * i].reshape(o, i)
        b = vals[pos + o * i:pos + o * i + o]
        pos += o * (i + 1)
        layers.append(Layer(w, b, act))
    return MlpGenerator(tuple(layers), id=meta["id"]), meta.get("manifest", {})


def atomic_write(path, data, mode="wb"):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(data)
        os.chmod(tmp, 0o644)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_generator(gen: MlpGenerator, path, manifest=None, sidecar=True):
    """Write ``gen``; with a manifest, also write ``<path>.manifest.json``."""
    atomic_write(path, generator_bytes(gen, manifest))
    if manifest and sidecar:
        atomic_write(str(path) + ".manifest.json",
                     json.dumps(manifest, indent=2, sort_keys=True) + "\n", mode="w")
    return Path(path)


def read_generator_file(path):
    with open(path, "rb") as fh:
        return parse_generator_bytes(fh.read())


def load_generator(path) -> MlpGenerator:
    return read_generator_file(path)[0]


def file_sha256(path) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()
