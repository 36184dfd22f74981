# modules/checkpoint.py

import json
import logging
import os
import struct
import tempfile
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from config.app_config import AppConfig
from config.model_config import EncoderConfig, PoolingHeadConfig
from config.train_config import TrainConfig
from modules.data_manager import Vocab, ensure_parent_dir
from modules.errors import CorruptionError, DataFormatError, SentenceSimError
from modules.siamese import SiameseModel, build_model

logger = logging.getLogger(__name__)

# magic, format version (u32), header length (u64); little-endian
PREFIX = struct.Struct("<4sIQ")
PAYLOAD_DTYPE = np.dtype("<f4")


class TensorEntry(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: str
    shape: List[int]
    offset: int = Field(ge=0)

    @property
    def nbytes(self) -> int:
        return int(np.prod(self.shape, dtype=np.int64)) * PAYLOAD_DTYPE.itemsize


class CheckpointHeader(BaseModel):
    model_config = ConfigDict(extra="forbid")

    encoder: EncoderConfig
    head: PoolingHeadConfig
    train: TrainConfig
    vocab: List[str]
    lowercase: bool = True
    has_classifier: bool = False
    tensors: List[TensorEntry]


@dataclass
class LoadedCheckpoint:
    model: SiameseModel
    vocab: Vocab
    train_config: TrainConfig


def encode_checkpoint(model: SiameseModel, vocab: Vocab, train_config: TrainConfig) -> bytes:
    entries, chunks, offset = [], [], 0
    for name, tensor in model.named_parameters():
        raw = np.ascontiguousarray(tensor.data, dtype=PAYLOAD_DTYPE).tobytes()
        entries.append(TensorEntry(name=name, shape=list(tensor.shape), offset=offset))
        chunks.append(raw)
        offset += len(raw)
    header = CheckpointHeader(
        encoder=model.encoder.config,
        head=model.head.config,
        train=train_config,
        vocab=vocab.words,
        lowercase=vocab.lowercase,
        has_classifier=model.classifier is not None,
        tensors=entries
    )
    header_bytes = header.model_dump_json().encode("utf-8")
    prefix = PREFIX.pack(AppConfig.CHECKPOINT_MAGIC, AppConfig.CHECKPOINT_VERSION, len(header_bytes))
    return prefix + header_bytes + b"".join(chunks)


def save_checkpoint(model: SiameseModel, vocab: Vocab, train_config: TrainConfig, path: str):
    """Write the checkpoint to a temp file beside `path`, then rename over it"""
    blob = encode_checkpoint(model, vocab, train_config)
    ensure_parent_dir(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, temp_path = tempfile.mkstemp(prefix=".ckpt-", dir=directory)
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(blob)
        os.replace(temp_path, path)
    except OSError as e:
        if os.path.exists(temp_path):
            os.remove(temp_path)
        raise DataFormatError(f"Error writing checkpoint {path}: {str(e)}") from e
    logger.info("Saved checkpoint %s (%d bytes)", path, len(blob))


def _parse_header(blob: bytes) -> Tuple[CheckpointHeader, bytes]:
    magic = AppConfig.CHECKPOINT_MAGIC
    if blob[:len(magic)] != magic[:len(blob)]:
        raise DataFormatError(f"Not a checkpoint: bad magic {blob[:4]!r}")
    if len(blob) < len(magic):
        raise CorruptionError("Checkpoint is shorter than its magic number")
    if len(blob) < PREFIX.size:
        raise CorruptionError("Checkpoint prefix is truncated")
    _, version, header_length = PREFIX.unpack_from(blob)
    if version != AppConfig.CHECKPOINT_VERSION:
        raise DataFormatError(f"Unsupported checkpoint version {version}")
    end = PREFIX.size + header_length
    if end > len(blob):
        raise CorruptionError(f"Header declares {header_length} bytes, only {len(blob) - PREFIX.size} present")
    try:
        header = CheckpointHeader.model_validate_json(blob[PREFIX.size:end])
    except (ValidationError, ValueError, SentenceSimError) as e:
        raise CorruptionError(f"Error reading checkpoint header: {str(e)}") from e
    return header, blob[end:]


def _check_layout(entries: List[TensorEntry], payload_size: int):
    names = [e.name for e in entries]
    if len(set(names)) != len(names):
        raise CorruptionError("A tensor is named more than once in the checkpoint header")
    position = 0
    for entry in sorted(entries, key=lambda e: e.offset):
        if entry.offset < position:
            raise CorruptionError(f"Tensor {entry.name} overlaps the previous tensor")
        if entry.offset + entry.nbytes > payload_size:
            raise CorruptionError(f"Tensor {entry.name} extends past the end of the payload")
        position = entry.offset + entry.nbytes
    if position != payload_size:
        raise CorruptionError(f"Checkpoint payload has {payload_size - position} unaccounted bytes")


def decode_checkpoint(blob: bytes) -> LoadedCheckpoint:
    header, payload = _parse_header(blob)
    _check_layout(header.tensors, len(payload))
    model = build_model(header.encoder, header.head, with_classifier=header.has_classifier)
    params = dict(model.named_parameters())
    declared = {e.name: e for e in header.tensors}
    if set(declared) != set(params):
        missing = sorted(set(params) - set(declared))
        extra = sorted(set(declared) - set(params))
        raise CorruptionError(f"Checkpoint tensors do not match the model (missing {missing}, unexpected {extra})")
    for name, tensor in params.items():
        entry = declared[name]
        if tuple(entry.shape) != tensor.shape:
            raise CorruptionError(f"Tensor {name} stored as {tuple(entry.shape)}, model expects {tensor.shape}")
        count = int(np.prod(entry.shape, dtype=np.int64))
        values = np.frombuffer(payload, dtype=PAYLOAD_DTYPE, count=count, offset=entry.offset)
        tensor.data = values.reshape(entry.shape).astype(tensor.dtype)
    vocab = Vocab(header.vocab, lowercase=header.lowercase)
    return LoadedCheckpoint(model, vocab, header.train)


def load_checkpoint(path: str) -> LoadedCheckpoint:
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except OSError as e:
        raise DataFormatError(f"Error reading checkpoint {path}: {str(e)}") from e
    loaded = decode_checkpoint(blob)
    logger.info("Loaded checkpoint %s", path)
    return loaded


def read_header(path: str) -> dict:
    """Checkpoint header as plain JSON data, for inspection"""
    with open(path, "rb") as f:
        header, _ = _parse_header(f.read())
    return json.loads(header.model_dump_json())
