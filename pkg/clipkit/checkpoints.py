"""Checkpoint file format.

Layout: the magic ``SARCLIP-CKPT``, a little-endian uint32 format version,
a little-endian uint64 header length, the UTF-8 JSON header, then every
tensor as little-endian float64 in header order. The header carries the
stage tag, config snapshot, vocab and its hash, fingerprint and one
``{name, shape}`` entry per tensor. Writes go to a temp file that is renamed
into place.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional

import numpy as np

from .config import TrainConfig
from .corpus import atomic_write_bytes
from .embed import EncoderParams, Vocab
from .exceptions import CheckpointError, ConfigError
from .optim import AdamState

MAGIC = b'SARCLIP-CKPT'
FORMAT_VERSION = 1
STAGE_TAGS = ('stage1', 'stage2', 'probe')


@dataclass
class Checkpoint:
    stage_tag: str
    params: EncoderParams
    vocab: Vocab
    config: TrainConfig
    fingerprint: str = ''
    optimizer: Optional[AdamState] = None
    extras: Dict[str, np.ndarray] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.stage_tag not in STAGE_TAGS:
            raise CheckpointError(f'unknown stage tag {self.stage_tag!r}')
        if self.params.vocab_size != len(self.vocab):
            raise CheckpointError(
                f'token table has {self.params.vocab_size} rows but the vocab has {len(self.vocab)} entries'
            )

    @property
    def vocab_hash(self):
        return self.vocab.digest()


def _tensor_entries(checkpoint):
    entries = [(name, tensor) for name, tensor in checkpoint.params.tensors.items()]
    if checkpoint.optimizer is not None:
        entries += [(f'adam.m.{name}', t) for name, t in sorted(checkpoint.optimizer.m.items())]
        entries += [(f'adam.v.{name}', t) for name, t in sorted(checkpoint.optimizer.v.items())]
    entries += [(f'extra.{name}', t) for name, t in sorted(checkpoint.extras.items())]
    return entries


def dumps(checkpoint: Checkpoint) -> bytes:
    entries = _tensor_entries(checkpoint)
    header = {
        'stage_tag': checkpoint.stage_tag,
        'config': checkpoint.config.as_dict(),
        'fingerprint': checkpoint.fingerprint,
        'vocab': checkpoint.vocab.itos,
        'vocab_hash': checkpoint.vocab_hash,
        'image_depth': checkpoint.params.image_depth,
        'text_depth': checkpoint.params.text_depth,
        'optimizer_step': checkpoint.optimizer.step if checkpoint.optimizer is not None else None,
        'meta': checkpoint.meta,
        'tensors': [{'name': name, 'shape': list(np.shape(tensor))} for name, tensor in entries],
    }
    header_bytes = json.dumps(header, sort_keys=True).encode('utf-8')
    parts = [MAGIC, struct.pack('<IQ', FORMAT_VERSION, len(header_bytes)), header_bytes]
    parts += [np.ascontiguousarray(tensor, dtype='<f8').tobytes() for _, tensor in entries]
    return b''.join(parts)


def loads(data: bytes, where='checkpoint') -> Checkpoint:
    if not data.startswith(MAGIC):
        raise CheckpointError(f'{where}: not a checkpoint (bad magic)')
    offset = len(MAGIC)
    try:
        version, header_len = struct.unpack_from('<IQ', data, offset)
    except struct.error:
        raise CheckpointError(f'{where}: truncated header') from None
    if version != FORMAT_VERSION:
        raise CheckpointError(f'{where}: format version {version} is not {FORMAT_VERSION}')
    offset += struct.calcsize('<IQ')
    try:
        header = json.loads(data[offset:offset + header_len].decode('utf-8'))
    except ValueError as exc:
        raise CheckpointError(f'{where}: malformed header ({exc})') from exc
    offset += header_len

    tensors = {}
    for entry in header['tensors']:
        shape = tuple(entry['shape'])
        count = int(np.prod(shape, dtype=np.int64))
        end = offset + 8 * count
        if end > len(data):
            raise CheckpointError(f'{where}: truncated tensor {entry["name"]}')
        tensors[entry['name']] = np.frombuffer(data[offset:end], dtype='<f8').astype(np.float64).reshape(shape)
        offset = end
    if offset != len(data):
        raise CheckpointError(f'{where}: {len(data) - offset} trailing bytes')

    vocab = Vocab(header['vocab'][1:])
    if vocab.digest() != header['vocab_hash']:
        raise CheckpointError(f'{where}: vocab hash mismatch')
    try:
        config = TrainConfig(**header['config'])
    except (TypeError, ConfigError) as exc:
        raise CheckpointError(f'{where}: bad config snapshot ({exc})') from exc

    params = {k: t for k, t in tensors.items() if not k.startswith(('adam.', 'extra.'))}
    optimizer = None
    if header.get('optimizer_step') is not None:
        optimizer = AdamState(
            header['optimizer_step'],
            {k[len('adam.m.'):]: t for k, t in tensors.items() if k.startswith('adam.m.')},
            {k[len('adam.v.'):]: t for k, t in tensors.items() if k.startswith('adam.v.')},
        )
    return Checkpoint(
        stage_tag=header['stage_tag'],
        params=EncoderParams(params, header['image_depth'], header['text_depth']),
        vocab=vocab,
        config=config,
        fingerprint=header.get('fingerprint', ''),
        optimizer=optimizer,
        extras={k[len('extra.'):]: t for k, t in tensors.items() if k.startswith('extra.')},
        meta=header.get('meta') or {},
    )


def save_checkpoint(checkpoint: Checkpoint, path):
    atomic_write_bytes(path, dumps(checkpoint))


def load_checkpoint(path) -> Checkpoint:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f'{path}: {exc}') from exc
    return loads(data, where=str(path))
