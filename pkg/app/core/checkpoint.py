"""
CSYN checkpoint files.

    magic b"CSYN" | version u32 | tensor count u32 |
    per tensor: name length u16, UTF-8 name, rank u8, dims u32 each,
                row-major little-endian float64 payload

Model hyperparameters that cannot be read off tensor shapes travel as
scalar `meta.*` tensors.
"""

import struct
from pathlib import Path
from typing import Optional

import numpy as np

from app.core.autodiff import parameter
from app.core.encoding import EncodingMode
from app.core.errors import CheckpointError
from app.core.models import Classifier, Generator
from app.schemas.config import ModelConfig

MAGIC = b"CSYN"
FORMAT_VERSION = 1

KIND_GENERATOR = 0.0
KIND_CLASSIFIER = 1.0
_ENCODING_CODES = {EncodingMode.NL_INCIDENT: 0.0, EncodingMode.ARRAY: 1.0}


def save_tensors(path: Path, tensors: dict[str, np.ndarray]) -> None:
    chunks = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(tensors))]
    for name, array in tensors.items():
        array = np.asarray(array, dtype="<f8")
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<B", array.ndim))
        chunks.append(struct.pack(f"<{array.ndim}I", *array.shape))
        chunks.append(np.ascontiguousarray(array).tobytes())
    Path(path).write_bytes(b"".join(chunks))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError("checkpoint is truncated")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_tensors(path: Path) -> dict[str, np.ndarray]:
    try:
        reader = _Reader(Path(path).read_bytes())
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e.strerror}") from None
    if reader.take(4) != MAGIC:
        raise CheckpointError(f"{path} is not a CSYN checkpoint")
    version, count = reader.unpack("<II")
    if version > FORMAT_VERSION:
        raise CheckpointError(f"checkpoint version {version} is newer than supported version {FORMAT_VERSION}")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = reader.unpack("<H")
        try:
            name = reader.take(name_len).decode("utf-8")
        except UnicodeDecodeError:
            raise CheckpointError("tensor name is not UTF-8") from None
        (rank,) = reader.unpack("<B")
        dims = reader.unpack(f"<{rank}I")
        n = int(np.prod(dims)) if rank else 1
        payload = reader.take(8 * n)
        tensors[name] = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(dims)
    if reader.pos != len(reader.buf):
        raise CheckpointError("trailing bytes after last tensor")
    return tensors


def _meta(tensors: dict[str, np.ndarray], key: str) -> float:
    try:
        return float(tensors[f"meta.{key}"])
    except KeyError:
        raise CheckpointError(f"checkpoint lacks meta.{key}") from None


def _split(tensors: dict[str, np.ndarray]) -> tuple[dict[str, np.ndarray], dict[str, np.ndarray]]:
    params = {k: v for k, v in tensors.items() if not k.startswith(("meta.", "loss."))}
    extra = {k: v for k, v in tensors.items() if k.startswith("loss.")}
    return params, extra


def _check_vocab(params: dict[str, np.ndarray], vocab_size: int) -> None:
    if "tok_emb" not in params or params["tok_emb"].shape[0] != vocab_size:
        raise CheckpointError(f"checkpoint vocabulary does not match ({vocab_size} tokens expected)")


def save_generator(path: Path, model: Generator, encoding: EncodingMode,
                   loss_weights: Optional[dict[str, float]] = None) -> None:
    tensors = model.state()
    tensors["meta.kind"] = np.array(KIND_GENERATOR)
    tensors["meta.n_heads"] = np.array(float(model.cfg.n_heads))
    tensors["meta.encoding"] = np.array(_ENCODING_CODES[EncodingMode(encoding)])
    for name, value in (loss_weights or {}).items():
        tensors[f"loss.{name}"] = np.array(float(value))
    save_tensors(path, tensors)


def save_classifier(path: Path, model: Classifier, encoding: EncodingMode) -> None:
    tensors = model.state()
    tensors["meta.kind"] = np.array(KIND_CLASSIFIER)
    tensors["meta.n_heads"] = np.array(float(model.cfg.clf_heads))
    tensors["meta.encoding"] = np.array(_ENCODING_CODES[EncodingMode(encoding)])
    save_tensors(path, tensors)


def _encoding(tensors: dict[str, np.ndarray]) -> EncodingMode:
    code = _meta(tensors, "encoding")
    for mode, value in _ENCODING_CODES.items():
        if value == code:
            return mode
    raise CheckpointError(f"unknown encoding code {code}")


def _wrap(params: dict[str, np.ndarray]) -> dict:
    return {name: parameter(array) for name, array in params.items()}


def load_generator(path: Path, cfg: ModelConfig, vocab_size: int
                   ) -> tuple[Generator, EncodingMode, dict[str, float]]:
    tensors = load_tensors(path)
    if _meta(tensors, "kind") != KIND_GENERATOR:
        raise CheckpointError(f"{path} is not a generator checkpoint")
    params, extra = _split(tensors)
    _check_vocab(params, vocab_size)
    d_model = params["tok_emb"].shape[1]
    try:
        model_cfg = cfg.model_copy(update={
            "d_model": d_model,
            "n_heads": int(_meta(tensors, "n_heads")),
            "max_len": params["pos_emb"].shape[0],
        })
        model = Generator(model_cfg, vocab_size, params=_wrap(params))
    except KeyError as e:
        raise CheckpointError(f"checkpoint lacks tensor {e}") from None
    loss_weights = {k.split(".", 1)[1]: float(v) for k, v in extra.items()}
    return model, _encoding(tensors), loss_weights


def load_classifier(path: Path, cfg: ModelConfig, vocab_size: int) -> tuple[Classifier, EncodingMode]:
    tensors = load_tensors(path)
    if _meta(tensors, "kind") != KIND_CLASSIFIER:
        raise CheckpointError(f"{path} is not a classifier checkpoint")
    params, _ = _split(tensors)
    _check_vocab(params, vocab_size)
    try:
        model_cfg = cfg.model_copy(update={
            "clf_dim": params["tok_emb"].shape[1],
            "clf_heads": int(_meta(tensors, "n_heads")),
            "clf_hidden": params["mlp.w1"].shape[1],
            "max_len": params["pos_emb"].shape[0],
        })
        model = Classifier(model_cfg, vocab_size, params=_wrap(params))
    except KeyError as e:
        raise CheckpointError(f"checkpoint lacks tensor {e}") from None
    return model, _encoding(tensors)
