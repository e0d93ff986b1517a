"""Binary feature store: little-endian float64 rows plus a JSON sidecar index.

``<name>`` holds N x dim values row-major; ``<name>.index.json`` maps keys
(image ids) to row numbers. A ``feature_ref`` has the form
``<store-path>#<key>``; the store path is relative to the file that holds
the reference and may be empty, meaning ``SARCLIP['FEATURE_STORE']``.
"""
from __future__ import annotations

import json
import os
import threading
from pathlib import Path
from typing import Dict, Sequence

import numpy as np
from django.conf import settings

from .corpus import atomic_write_bytes
from .exceptions import CorpusError

STORE_FORMAT = 'sarclip-features'
STORE_FORMAT_VERSION = 1


def index_path(path):
    path = Path(path)
    return path.with_name(path.name + '.index.json')


def write_feature_store(path, keys: Sequence[str], matrix, fingerprint=''):
    matrix = np.ascontiguousarray(matrix, dtype='<f8')
    if matrix.ndim != 2 or matrix.shape[0] != len(keys):
        raise ValueError(f'expected {len(keys)} rows, got shape {matrix.shape}')
    if len(set(keys)) != len(keys):
        raise ValueError('feature store keys must be unique')
    index = {
        'format': STORE_FORMAT,
        'format_version': STORE_FORMAT_VERSION,
        'dim': int(matrix.shape[1]),
        'fingerprint': fingerprint,
        'rows': {key: row for row, key in enumerate(keys)},
    }
    atomic_write_bytes(path, matrix.tobytes())
    atomic_write_bytes(index_path(path), (json.dumps(index, indent=1, sort_keys=True) + '\n').encode('utf-8'))


class FeatureStore:
    def __init__(self, path, matrix, rows: Dict[str, int], fingerprint=''):
        self.path = Path(path)
        self.matrix = matrix
        self.rows = rows
        self.fingerprint = fingerprint

    @property
    def dim(self):
        return self.matrix.shape[1]

    @classmethod
    def open(cls, path):
        path = Path(path)
        try:
            index = json.loads(index_path(path).read_text(encoding='utf-8'))
            raw = np.fromfile(path, dtype='<f8')
        except (OSError, ValueError) as exc:
            raise CorpusError(f'{path}: cannot open feature store ({exc})') from exc
        if index.get('format') != STORE_FORMAT or index.get('format_version') != STORE_FORMAT_VERSION:
            raise CorpusError(f'{path}: unsupported feature store format')
        dim = int(index['dim'])
        rows = index['rows']
        if dim < 1 or raw.size != dim * len(rows):
            raise CorpusError(f'{path}: {raw.size} values do not fill {len(rows)} rows of {dim}')
        matrix = raw.astype(np.float64).reshape(len(rows), dim)
        if not np.all(np.isfinite(matrix)):
            raise CorpusError(f'{path}: non-finite feature values')
        return cls(path, matrix, rows, index.get('fingerprint', ''))

    def vector(self, key):
        try:
            return self.matrix[self.rows[key]]
        except KeyError:
            raise CorpusError(f'{self.path}: no features for {key!r}') from None


class FeatureResolver:
    """Resolves ``feature_ref`` strings relative to ``base_dir``, caching stores."""

    def __init__(self, base_dir):
        self.base_dir = Path(base_dir)
        self._stores = {}
        self._lock = threading.Lock()

    def store(self, store_path):
        path = self.base_dir / (store_path or settings.SARCLIP['FEATURE_STORE'])
        with self._lock:
            if path not in self._stores:
                self._stores[path] = FeatureStore.open(path)
            return self._stores[path]

    def vector(self, ref):
        store_path, key = split_ref(ref)
        return self.store(store_path).vector(key)

    def matrix(self, refs):
        vectors = [self.vector(ref) for ref in refs]
        if not vectors:
            raise CorpusError('no features to resolve')
        dims = {v.shape[0] for v in vectors}
        if len(dims) != 1:
            raise CorpusError(f'feature dimensions differ across the corpus: {sorted(dims)}')
        return np.vstack(vectors)


def split_ref(ref):
    store_path, sep, key = ref.rpartition('#')
    return (store_path, key) if sep else ('', ref)


def rebase_ref(ref, from_dir, to_dir):
    """Rewrite ``ref`` so it resolves from ``to_dir`` to the same store it named from ``from_dir``."""
    store_path, key = split_ref(ref)
    target = (Path(from_dir) / (store_path or settings.SARCLIP['FEATURE_STORE'])).resolve()
    relative = Path(os.path.relpath(target, Path(to_dir).resolve())).as_posix()
    return f'{relative}#{key}'
