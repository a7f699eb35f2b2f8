"""Parametric sparse encoder and its checkpoint format.

The reference model weights every token present in the input as

    weight(t) = softplus(g[t] + l[t] * log1p(tf(t)))

so the support of an embedding is exactly the input's token support and the
gradient with respect to ``g`` and ``l`` is available in closed form.
Anything with ``encode``/``encode_batch`` of the same shape can stand in for
it.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import BagOfTokens, Vocabulary

__all__ = [
    "FingerprintMismatch",
    "CheckpointError",
    "EncoderParams",
    "SparseEmbedding",
    "Checkpoint",
    "softplus",
    "sigmoid",
    "encode",
    "score_pair",
    "save_checkpoint",
    "load_checkpoint",
    "CHECKPOINT_FORMAT_VERSION",
]

CHECKPOINT_FORMAT_VERSION = 1
_MAGIC = b"RAGTUNE-CKPT\n"


class FingerprintMismatch(ValueError):
    pass


class CheckpointError(ValueError):
    pass


def softplus(z):
    return np.logaddexp(0.0, z)


def sigmoid(z):
    return np.exp(-np.logaddexp(0.0, -z))


@dataclass(frozen=True)
class EncoderParams:
    g: np.ndarray
    l: np.ndarray
    fingerprint: str

    def __post_init__(self):
        if self.g.shape != self.l.shape or self.g.ndim != 1:
            raise ValueError("g and l must be 1-d arrays of equal length")
        if not (np.all(np.isfinite(self.g)) and np.all(np.isfinite(self.l))):
            raise ValueError("encoder parameters must be finite")

    @classmethod
    def init(cls, vocab: Vocabulary) -> "EncoderParams":
        n = len(vocab)
        return cls(np.zeros(n), np.zeros(n), vocab.fingerprint)

    @property
    def size(self) -> int:
        return len(self.g)

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(self.g.astype("<f8").tobytes())
        h.update(self.l.astype("<f8").tobytes())
        return h.hexdigest()[:16]


@dataclass(frozen=True)
class SparseEmbedding:
    ids: np.ndarray
    weights: np.ndarray
    fingerprint: str

    def __len__(self) -> int:
        return len(self.ids)

    def entries(self) -> list[tuple[int, float]]:
        return [(int(i), float(w)) for i, w in zip(self.ids, self.weights)]


def _check(fp_a: str, fp_b: str) -> None:
    if fp_a != fp_b:
        raise FingerprintMismatch(f"vocabulary fingerprint mismatch: {fp_a} != {fp_b}")


def encode(params: EncoderParams, bot: BagOfTokens) -> SparseEmbedding:
    _check(params.fingerprint, bot.fingerprint)
    z = params.g[bot.ids] + params.l[bot.ids] * np.log1p(bot.counts)
    return SparseEmbedding(bot.ids, softplus(z), bot.fingerprint)


def score_pair(x: SparseEmbedding | BagOfTokens, y: SparseEmbedding | BagOfTokens) -> float:
    """Inner product over shared token ids.

    Products are accumulated left to right in ascending token id; the
    inverted-index searches use the same order, so their scores agree with
    this one bit for bit.
    """
    _check(x.fingerprint, y.fingerprint)
    _, ix, iy = np.intersect1d(x.ids, y.ids, assume_unique=True, return_indices=True)
    if len(ix) == 0:
        return 0.0
    prod = x.weights[ix] * y.weights[iy]
    return float(np.cumsum(prod)[-1])


@dataclass
class Checkpoint:
    params: EncoderParams
    m_g: np.ndarray
    m_l: np.ndarray
    v_g: np.ndarray
    v_l: np.ndarray
    step: int = 0
    seed: int = 0
    config_hash: str = ""
    extra: dict = field(default_factory=dict)

    @classmethod
    def fresh(cls, vocab: Vocabulary, seed: int = 0, config_hash: str = "") -> "Checkpoint":
        p = EncoderParams.init(vocab)
        z = np.zeros(p.size)
        return cls(p, z.copy(), z.copy(), z.copy(), z.copy(), 0, seed, config_hash)


def checkpoint_bytes(ck: Checkpoint) -> bytes:
    header = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "vocab_fingerprint": ck.params.fingerprint,
        "vocab_size": ck.params.size,
        "step": int(ck.step),
        "seed": int(ck.seed),
        "config_hash": ck.config_hash,
        "extra": ck.extra,
    }
    hb = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    arrays = (ck.params.g, ck.params.l, ck.m_g, ck.m_l, ck.v_g, ck.v_l)
    body = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays)
    return _MAGIC + struct.pack("<I", len(hb)) + hb + body


def save_checkpoint(ck: Checkpoint, path: str | Path) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(checkpoint_bytes(ck))
    tmp.replace(path)


def load_checkpoint(path: str | Path, vocab: Vocabulary | None = None) -> Checkpoint:
    """Read a checkpoint; with ``vocab`` given, refuse a mismatched fingerprint."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"{path}: {exc}") from exc
    if not data.startswith(_MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint file")
    off = len(_MAGIC)
    try:
        (hlen,) = struct.unpack_from("<I", data, off)
        header = json.loads(data[off + 4 : off + 4 + hlen].decode("utf-8"))
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header") from exc
    if header.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {header.get('format_version')}")
    n = header["vocab_size"]
    body = data[off + 4 + hlen :]
    if len(body) != 6 * 8 * n:
        raise CheckpointError(f"{path}: truncated or corrupt body")
    arrs = np.frombuffer(body, dtype="<f8").astype(np.float64).reshape(6, n)
    fp = header["vocab_fingerprint"]
    if vocab is not None:
        _check(vocab.fingerprint, fp)
        if len(vocab) != n:
            raise FingerprintMismatch(f"{path}: vocabulary size {len(vocab)} != {n}")
    params = EncoderParams(arrs[0].copy(), arrs[1].copy(), fp)
    return Checkpoint(
        params, arrs[2].copy(), arrs[3].copy(), arrs[4].copy(), arrs[5].copy(),
        header["step"], header["seed"], header.get("config_hash", ""), header.get("extra", {}),
    )
