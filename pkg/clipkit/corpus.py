"""Pair corpus file format: one JSON object per line, UTF-8.

The first line is a header ``{"format": "sarclip-pairs", "format_version": 1,
"fingerprint": ...}``; every following line is one pair with the fields
image_id, source, split, feature_ref, caption_text, template_id and
template_kind.
"""
from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence

from .exceptions import CorpusError
from .records import Split

PAIRS_FORMAT = 'sarclip-pairs'
PAIRS_FORMAT_VERSION = 1
PAIR_FIELDS = ('image_id', 'source', 'split', 'feature_ref', 'caption_text', 'template_id', 'template_kind')


@dataclass(frozen=True)
class PairRecord:
    image_id: str
    source: str
    split: Split
    feature_ref: str
    caption_text: str
    template_id: str
    template_kind: str

    def to_json(self):
        payload = {name: getattr(self, name) for name in PAIR_FIELDS}
        payload['split'] = self.split.value
        return json.dumps(payload, sort_keys=True, ensure_ascii=False)

    @classmethod
    def from_json(cls, line, where=''):
        try:
            payload = json.loads(line)
            values = {name: payload[name] for name in PAIR_FIELDS}
            values['split'] = Split(values['split'])
        except (ValueError, KeyError, TypeError) as exc:
            raise CorpusError(f'{where}: malformed pair record ({exc})') from exc
        return cls(**values)


@dataclass
class PairCorpus:
    pairs: List[PairRecord]
    fingerprint: str = ''
    path: Path = None

    def __len__(self):
        return len(self.pairs)

    @property
    def base_dir(self):
        return self.path.parent if self.path else Path('.')

    def split(self, split):
        split = Split(split)
        return PairCorpus([p for p in self.pairs if p.split is split], self.fingerprint, self.path)

    def images(self):
        """Distinct (image_id, source) keys in first-seen order."""
        seen = {}
        for pair in self.pairs:
            seen.setdefault((pair.image_id, pair.source), pair)
        return list(seen.values())

    def is_one_to_one(self):
        return len(self.images()) == len(self.pairs)


def atomic_write_bytes(path, data: bytes):
    """Write ``data`` to a temp file next to ``path`` and rename it into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    handle, temp = tempfile.mkstemp(dir=path.parent, prefix=f'.{path.name}.')
    try:
        with os.fdopen(handle, 'wb') as stream:
            stream.write(data)
        os.replace(temp, path)
    except BaseException:
        if os.path.exists(temp):
            os.unlink(temp)
        raise


def write_pairs(pairs: Sequence[PairRecord], path, fingerprint=''):
    header = json.dumps(
        {'format': PAIRS_FORMAT, 'format_version': PAIRS_FORMAT_VERSION, 'fingerprint': fingerprint},
        sort_keys=True,
    )
    lines = [header] + [pair.to_json() for pair in pairs]
    atomic_write_bytes(path, ('\n'.join(lines) + '\n').encode('utf-8'))


def read_pairs(path) -> PairCorpus:
    path = Path(path)
    try:
        lines = path.read_text(encoding='utf-8').splitlines()
    except OSError as exc:
        raise CorpusError(f'{path}: {exc}') from exc
    if not lines:
        raise CorpusError(f'{path}: empty file, expected a pair corpus header')
    try:
        header = json.loads(lines[0])
    except ValueError as exc:
        raise CorpusError(f'{path}:1: malformed header ({exc})') from exc
    if not isinstance(header, dict) or header.get('format') != PAIRS_FORMAT:
        raise CorpusError(f'{path}:1: not a {PAIRS_FORMAT} file')
    if header.get('format_version') != PAIRS_FORMAT_VERSION:
        raise CorpusError(
            f'{path}: format version {header.get("format_version")} is not {PAIRS_FORMAT_VERSION}'
        )
    pairs = [
        PairRecord.from_json(line, where=f'{path}:{number}')
        for number, line in enumerate(lines[1:], start=2)
        if line.strip()
    ]
    return PairCorpus(pairs=pairs, fingerprint=header.get('fingerprint', ''), path=path)
