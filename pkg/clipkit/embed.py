"""The two towers: tokenizer, MLP encoders, L2 normalization and similarity.

Both towers are pure functions of (params, input). Batched forward passes
return a cache that the matching backward pass consumes, so the trainer can
backpropagate the contrastive loss without an autograd engine.
"""
from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .exceptions import CorpusError, NumericalError

UNK = '<unk>'
TOKEN_PATTERN = re.compile(r'[a-z0-9]+(?:-[a-z0-9]+)*')
ENCODE_CHUNK = 1024


def words(text: str) -> List[str]:
    """Lowercased alphanumeric runs; hyphenated names like ``t-72`` stay whole."""
    return TOKEN_PATTERN.findall(text.lower())


class Vocab:
    def __init__(self, tokens: Sequence[str] = ()):
        self.itos = [UNK] + [t for t in tokens if t != UNK]
        self.stoi = {token: index for index, token in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise ValueError('vocab tokens must be unique')

    def __len__(self):
        return len(self.itos)

    def __eq__(self, other):
        return isinstance(other, Vocab) and self.itos == other.itos

    def index(self, token):
        return self.stoi.get(token, 0)

    def digest(self):
        return hashlib.sha256('\n'.join(self.itos).encode('utf-8')).hexdigest()

    @classmethod
    def build(cls, texts):
        return cls(sorted({token for text in texts for token in words(text)}))

    @classmethod
    def load(cls, path):
        lines = Path(path).read_text(encoding='utf-8').splitlines()
        if not lines or lines[0] != UNK:
            raise CorpusError(f'{path}: line 0 of a vocab file must be {UNK}')
        return cls(lines[1:])

    def save(self, path):
        Path(path).write_text('\n'.join(self.itos) + '\n', encoding='utf-8')


def tokenize(text: str, vocab: Vocab) -> List[int]:
    return [vocab.index(token) for token in words(text)]


@dataclass
class EncoderParams:
    """Named float64 tensors for both towers plus the log temperature."""
    tensors: Dict[str, np.ndarray]
    image_depth: int
    text_depth: int

    def __getitem__(self, name):
        return self.tensors[name]

    @property
    def names(self):
        return list(self.tensors)

    @property
    def embedding(self):
        return self.tensors['text.embedding']

    @property
    def embed_dim(self):
        return self.tensors[f'image.{self.image_depth - 1}.weight'].shape[1]

    @property
    def image_dim(self):
        return self.tensors['image.0.weight'].shape[0]

    @property
    def vocab_size(self):
        return self.embedding.shape[0]

    @property
    def log_tau(self):
        return float(self.tensors['log_tau'])

    @property
    def tau(self):
        return float(np.exp(self.log_tau))

    def layers(self, tower):
        depth = self.image_depth if tower == 'image' else self.text_depth
        return [(self.tensors[f'{tower}.{i}.weight'], self.tensors[f'{tower}.{i}.bias']) for i in range(depth)]

    def layer_groups(self, tower):
        """Tensor names per layer, bottom to top; the token table is the text tower's bottom layer."""
        depth = self.image_depth if tower == 'image' else self.text_depth
        groups = [[f'{tower}.{i}.weight', f'{tower}.{i}.bias'] for i in range(depth)]
        if tower == 'text':
            groups.insert(0, ['text.embedding'])
        return groups

    def shapes(self):
        return {name: tensor.shape for name, tensor in self.tensors.items()}

    def replace(self, **updates):
        tensors = dict(self.tensors)
        tensors.update(updates)
        return EncoderParams(tensors, self.image_depth, self.text_depth)

    def copy(self):
        return EncoderParams({k: v.copy() for k, v in self.tensors.items()}, self.image_depth, self.text_depth)

    def digest(self):
        h = hashlib.sha256()
        for name in sorted(self.tensors):
            tensor = np.ascontiguousarray(self.tensors[name], dtype='<f8')
            h.update(name.encode('utf-8'))
            h.update(repr(tensor.shape).encode('utf-8'))
            h.update(tensor.tobytes())
        return h.hexdigest()


def init_params(image_dim, vocab_size, embed_dim=32, hidden=64, token_dim=32, depth=2, tau=0.07, seed=0):
    if depth < 1:
        raise ValueError('encoder depth must be at least 1')
    rng = np.random.default_rng(seed)
    tensors = {}
    for tower, width in (('image', image_dim), ('text', token_dim)):
        if tower == 'text':
            tensors['text.embedding'] = rng.normal(0.0, 1.0, size=(vocab_size, token_dim))
        sizes = [width] + [hidden] * (depth - 1) + [embed_dim]
        for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            bound = 1.0 / np.sqrt(fan_in)
            tensors[f'{tower}.{i}.weight'] = rng.uniform(-bound, bound, size=(fan_in, fan_out))
            tensors[f'{tower}.{i}.bias'] = np.zeros(fan_out)
    tensors['log_tau'] = np.array(np.log(tau))
    return EncoderParams(tensors, depth, depth)


def as_dense(values) -> np.ndarray:
    matrix = np.asarray(values, dtype=np.float64)
    if matrix.ndim != 2:
        raise ValueError(f'expected a 2-d matrix, got shape {matrix.shape}')
    if not np.all(np.isfinite(matrix)):
        raise NumericalError('matrix has non-finite entries')
    return matrix


def mlp_forward(x, layers):
    activations = [x]
    h = x
    last = len(layers) - 1
    for index, (weight, bias) in enumerate(layers):
        h = h @ weight + bias
        if index < last:
            h = np.tanh(h)
        activations.append(h)
    return h, activations


def mlp_backward(grad, layers, activations):
    """Gradients for every (weight, bias) and the gradient w.r.t. the input."""
    grads = [None] * len(layers)
    last = len(layers) - 1
    for index in range(last, -1, -1):
        weight, _ = layers[index]
        if index < last:
            grad = grad * (1.0 - activations[index + 1] ** 2)
        grads[index] = (activations[index].T @ grad, grad.sum(axis=0))
        grad = grad @ weight.T
    return grads, grad


def l2_normalize(y):
    norms = np.sqrt(np.einsum('ij,ij->i', y, y))
    if np.any(norms < np.finfo(np.float64).tiny):
        raise NumericalError('degenerate embedding')
    return y / norms[:, None], norms


def l2_normalize_backward(dz, z, norms):
    return (dz - z * np.einsum('ij,ij->i', dz, z)[:, None]) / norms[:, None]


@dataclass
class TowerCache:
    activations: list
    z: np.ndarray
    norms: np.ndarray
    rows: Optional[np.ndarray] = None
    flat: Optional[np.ndarray] = None
    lengths: Optional[np.ndarray] = None


def image_forward(features, params: EncoderParams):
    x = as_dense(features)
    y, activations = mlp_forward(x, params.layers('image'))
    z, norms = l2_normalize(y)
    return z, TowerCache(activations, z, norms)


def image_backward(dz, params: EncoderParams, cache: TowerCache):
    dy = l2_normalize_backward(dz, cache.z, cache.norms)
    grads, _ = mlp_backward(dy, params.layers('image'), cache.activations)
    named = {}
    for i, (dw, db) in enumerate(grads):
        named[f'image.{i}.weight'] = dw
        named[f'image.{i}.bias'] = db
    return named


def _flatten_tokens(token_lists):
    lengths = np.array([len(tokens) for tokens in token_lists], dtype=np.int64)
    if lengths.size == 0 or np.any(lengths == 0):
        raise CorpusError('cannot encode an empty token list')
    # sorted within each text, so pooling is exactly order-invariant
    flat = np.concatenate([np.sort(np.asarray(tokens, dtype=np.int64)) for tokens in token_lists])
    rows = np.repeat(np.arange(len(token_lists)), lengths)
    return flat, rows, lengths


def text_forward(token_lists, params: EncoderParams):
    flat, rows, lengths = _flatten_tokens(token_lists)
    embedding = params.embedding
    if flat.max() >= embedding.shape[0] or flat.min() < 0:
        raise CorpusError('token index outside the vocabulary')
    sums = np.zeros((len(lengths), embedding.shape[1]))
    np.add.at(sums, rows, embedding[flat])
    pooled = sums / lengths[:, None]
    y, activations = mlp_forward(pooled, params.layers('text'))
    z, norms = l2_normalize(y)
    return z, TowerCache(activations, z, norms, rows=rows, flat=flat, lengths=lengths)


def text_backward(dz, params: EncoderParams, cache: TowerCache):
    dy = l2_normalize_backward(dz, cache.z, cache.norms)
    grads, dpooled = mlp_backward(dy, params.layers('text'), cache.activations)
    named = {}
    for i, (dw, db) in enumerate(grads):
        named[f'text.{i}.weight'] = dw
        named[f'text.{i}.bias'] = db
    dembedding = np.zeros_like(params.embedding)
    np.add.at(dembedding, cache.flat, (dpooled / cache.lengths[:, None])[cache.rows])
    named['text.embedding'] = dembedding
    return named


def encode_text(tokens, params: EncoderParams) -> np.ndarray:
    z, _ = text_forward([tokens], params)
    return z[0]


def encode_image(feature, params: EncoderParams) -> np.ndarray:
    z, _ = image_forward(np.asarray(feature, dtype=np.float64)[None, :], params)
    return z[0]


def encode_texts(token_lists, params: EncoderParams) -> np.ndarray:
    chunks = [
        text_forward(token_lists[start:start + ENCODE_CHUNK], params)[0]
        for start in range(0, len(token_lists), ENCODE_CHUNK)
    ]
    return np.vstack(chunks) if chunks else np.zeros((0, params.embed_dim))


def encode_images(features, params: EncoderParams) -> np.ndarray:
    features = as_dense(features)
    chunks = [
        image_forward(features[start:start + ENCODE_CHUNK], params)[0]
        for start in range(0, len(features), ENCODE_CHUNK)
    ]
    return np.vstack(chunks) if chunks else np.zeros((0, params.embed_dim))


def cosine_similarity_matrix(zv, zt) -> np.ndarray:
    """Entry (i, j) is zv_i . zt_j; rows are unit-norm so this is the cosine.

    ``einsum`` sums each dot product in index order, so swapping the
    arguments yields the exact transpose.
    """
    zv, zt = as_dense(zv), as_dense(zt)
    if zv.shape[1] != zt.shape[1]:
        raise ValueError(f'embedding widths differ: {zv.shape[1]} vs {zt.shape[1]}')
    return np.einsum('ik,jk->ij', zv, zt)
