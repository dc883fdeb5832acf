"""Hashed bag-of-tokens featurizer with a trainable linear projection.

A sentence is tokenized, each token hashed (FNV-1a 64) to a signed one-hot
vector of size ``hash_dim``, and the vectors are mean-pooled. The encoder
multiplies that pooled vector by a ``hash_dim x out_dim`` projection.
"""

from __future__ import annotations

import re
import struct
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .fileio import atomic_write_bytes, atomic_write_text

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1

MODEL_MAGIC = b"STPM"
EMB_MAGIC = b"SEMB"
FORMAT_VERSION = 1

_TOKEN = re.compile(r"@(?:table|fig)\b|[^\W_]+")


class FormatError(ValueError):
    pass


class EncodeError(ValueError):
    pass


def fnv1a_64(data: bytes) -> int:
    h = FNV_OFFSET
    for b in data:
        h ^= b
        h = (h * FNV_PRIME) & _MASK64
    return h


@dataclass(frozen=True)
class FeaturizerConfig:
    hash_dim: int = 32768
    lowercase: bool = True

    def __post_init__(self):
        if self.hash_dim <= 0 or self.hash_dim & (self.hash_dim - 1):
            raise ValueError(f"hash_dim must be a power of two, got {self.hash_dim}")


def tokenize(text: str, lowercase: bool = True) -> list[str]:
    if lowercase:
        text = text.lower()
    return _TOKEN.findall(text)


@lru_cache(maxsize=1 << 18)
def _hashed(token: str, hash_dim: int) -> tuple[int, float]:
    h = fnv1a_64(token.encode("utf-8"))
    return h & (hash_dim - 1), (-1.0 if h >> 63 else 1.0)


def _pooled(text: str, config: FeaturizerConfig) -> tuple[list[int], list[float]]:
    tokens = tokenize(text, config.lowercase)
    if not tokens:
        return [], []
    acc: dict[int, float] = {}
    for tok in tokens:
        idx, sign = _hashed(tok, config.hash_dim)
        acc[idx] = acc.get(idx, 0.0) + sign
    n = len(tokens)
    idx = sorted(i for i, v in acc.items() if v != 0.0)
    return idx, [acc[i] / n for i in idx]


def featurize(text: str, config: FeaturizerConfig = FeaturizerConfig()) -> sp.csr_matrix:
    """Mean-pooled signed hashed token vector, as a ``1 x hash_dim`` sparse row."""
    idx, vals = _pooled(text, config)
    return sp.csr_matrix((vals, idx, [0, len(idx)]), shape=(1, config.hash_dim), dtype=np.float64)


def featurize_batch(texts: Sequence[str], config: FeaturizerConfig = FeaturizerConfig()) -> sp.csr_matrix:
    indptr = [0]
    indices: list[int] = []
    data: list[float] = []
    for t in texts:
        idx, vals = _pooled(t, config)
        indices.extend(idx)
        data.extend(vals)
        indptr.append(len(indices))
    return sp.csr_matrix(
        (np.asarray(data, dtype=np.float64), np.asarray(indices, dtype=np.int64), np.asarray(indptr)),
        shape=(len(texts), config.hash_dim),
    )


@dataclass
class EncoderModel:
    featurizer: FeaturizerConfig
    projection: np.ndarray
    normalize_output: bool = False

    def __post_init__(self):
        self.projection = np.asarray(self.projection)
        if self.projection.ndim != 2 or self.projection.shape[0] != self.featurizer.hash_dim:
            raise ValueError(f"projection must have shape ({self.featurizer.hash_dim}, out_dim), "
                             f"got {self.projection.shape}")
        if not np.all(np.isfinite(self.projection)):
            raise ValueError("projection has non-finite entries")

    @property
    def out_dim(self) -> int:
        return self.projection.shape[1]

    @property
    def hash_dim(self) -> int:
        return self.featurizer.hash_dim

    def with_projection(self, projection: np.ndarray) -> EncoderModel:
        return EncoderModel(self.featurizer, projection, self.normalize_output)


def project_features(features: sp.csr_matrix, projection: np.ndarray, normalize: bool = False) -> np.ndarray:
    """``features @ projection`` in float64, optionally L2-normalized per row."""
    out = np.asarray(features @ projection.astype(np.float64, copy=False))
    bad = ~np.all(np.isfinite(out), axis=1)
    if bad.any():
        raise EncodeError(f"non-finite embedding at row {int(np.argmax(bad))}")
    if normalize:
        norms = np.linalg.norm(out, axis=1)
        zero = norms == 0
        if zero.any():
            raise EncodeError(f"cannot normalize zero embedding at row {int(np.argmax(zero))}")
        out = out / norms[:, None]
    return out


def encode(model: EncoderModel, sentences: Sequence[str]) -> np.ndarray:
    """Embed sentences; row i corresponds to sentence i."""
    return project_features(featurize_batch(sentences, model.featurizer), model.projection,
                            model.normalize_output)


def random_baseline_model(seed: int, config: FeaturizerConfig = FeaturizerConfig(),
                          out_dim: int = 64, normalize_output: bool = False) -> EncoderModel:
    """Untrained encoder: projection entries i.i.d. uniform in +-1/sqrt(hash_dim).

    Draws come from numpy's PCG64 ``default_rng(seed)`` in row-major order and
    are stored as float32.
    """
    bound = 1.0 / np.sqrt(config.hash_dim)
    rng = np.random.default_rng(seed)
    w = rng.uniform(-bound, bound, size=(config.hash_dim, out_dim)).astype(np.float32)
    return EncoderModel(config, w, normalize_output)


# ---------------------------------------------------------------------------
# binary formats

_MODEL_HEADER = struct.Struct("<4sIIIB")
_EMB_HEADER = struct.Struct("<4sIII")


def model_to_bytes(model: EncoderModel) -> bytes:
    # bit 0: normalize_output; bit 1: case-sensitive featurizer
    flags = int(model.normalize_output) | (0 if model.featurizer.lowercase else 2)
    header = _MODEL_HEADER.pack(MODEL_MAGIC, FORMAT_VERSION, model.hash_dim, model.out_dim, flags)
    return header + np.ascontiguousarray(model.projection, dtype="<f4").tobytes()


def model_from_bytes(data: bytes) -> EncoderModel:
    if len(data) < _MODEL_HEADER.size:
        raise FormatError(f"model file truncated: {len(data)} bytes, header needs {_MODEL_HEADER.size}")
    magic, version, hash_dim, out_dim, flags = _MODEL_HEADER.unpack_from(data)
    if magic != MODEL_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MODEL_MAGIC!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported model version {version}")
    if flags & ~3:
        raise FormatError(f"unknown flag bits {flags:#x}")
    expected = hash_dim * out_dim * 4
    actual = len(data) - _MODEL_HEADER.size
    if expected != actual:
        raise FormatError(f"matrix payload size mismatch: expected {expected} bytes, got {actual}")
    try:
        config = FeaturizerConfig(hash_dim, lowercase=not flags & 2)
    except ValueError as e:
        raise FormatError(str(e)) from None
    w = np.frombuffer(data, dtype="<f4", offset=_MODEL_HEADER.size).reshape(hash_dim, out_dim)
    try:
        return EncoderModel(config, w.astype(np.float32), bool(flags & 1))
    except ValueError as e:
        raise FormatError(str(e)) from None


def save_model(model: EncoderModel, path: str | Path) -> None:
    atomic_write_bytes(path, model_to_bytes(model))


def load_model(path: str | Path) -> EncoderModel:
    return model_from_bytes(Path(path).read_bytes())


def embeddings_to_bytes(x: np.ndarray) -> bytes:
    x = np.asarray(x)
    if x.ndim != 2:
        raise ValueError("embedding matrix must be 2-D")
    return _EMB_HEADER.pack(EMB_MAGIC, FORMAT_VERSION, *x.shape) + np.ascontiguousarray(x, dtype="<f4").tobytes()


def embeddings_from_bytes(data: bytes) -> np.ndarray:
    if len(data) < _EMB_HEADER.size:
        raise FormatError("embedding file truncated")
    magic, version, rows, dim = _EMB_HEADER.unpack_from(data)
    if magic != EMB_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {EMB_MAGIC!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported embedding version {version}")
    expected = rows * dim * 4
    actual = len(data) - _EMB_HEADER.size
    if expected != actual:
        raise FormatError(f"matrix payload size mismatch: expected {expected} bytes, got {actual}")
    x = np.frombuffer(data, dtype="<f4", offset=_EMB_HEADER.size).reshape(rows, dim).astype(np.float64)
    if not np.all(np.isfinite(x)):
        raise FormatError("embedding file contains non-finite values")
    return x


def save_embeddings(x: np.ndarray, path: str | Path) -> None:
    atomic_write_bytes(path, embeddings_to_bytes(x))


def export_embeddings(x: np.ndarray, path: str | Path) -> None:
    """Write a TSV of float32-rounded values, one row per line."""
    x32 = np.asarray(x, dtype=np.float32)
    lines = ["\t".join(repr(float(v)) for v in row) for row in x32]
    atomic_write_text(path, "".join(line + "\n" for line in lines))


def import_embeddings(path: str | Path) -> np.ndarray:
    rows: list[list[float]] = []
    width = None
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            fields = line.split("\t")
            if width is None:
                width = len(fields)
            elif len(fields) != width:
                raise FormatError(f"{path}:{lineno}: expected {width} fields, got {len(fields)}")
            try:
                row = [float(v) for v in fields]
            except ValueError as e:
                raise FormatError(f"{path}:{lineno}: {e}") from None
            if not all(np.isfinite(row)):
                raise FormatError(f"{path}:{lineno}: non-finite value")
            rows.append(row)
    if not rows:
        return np.zeros((0, 0))
    return np.array(rows, dtype=np.float64)


def load_embeddings(path: str | Path) -> np.ndarray:
    """Load ``.semb`` binary, falling back to TSV when the magic is absent."""
    data = Path(path).read_bytes()
    if data[:4] == EMB_MAGIC:
        return embeddings_from_bytes(data)
    return import_embeddings(path)
