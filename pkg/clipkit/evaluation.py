"""Retrieval recall, zero-shot classification, accuracy and the linear probe."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Sequence

import numpy as np

from .captions import TemplateKind, fill_template, template_pool
from .checkpoints import Checkpoint
from .config import ProbeConfig
from .corpus import PairCorpus
from .embed import EncoderParams, as_dense, cosine_similarity_matrix, encode_images, encode_texts, tokenize
from .exceptions import CorpusError, FreezeViolation, ValidationFailed
from .features import FeatureResolver
from .optim import AdamState, adam_step
from .reports import EvalReport

logger = logging.getLogger(__name__)

DEFAULT_KS = (1, 5, 10)
RANK_CHUNK = 1024


def retrieval_ranks(similarities, ground_truth) -> np.ndarray:
    """0-based rank of each query's true item; ties go to the lower item index."""
    sims = as_dense(similarities)
    truth = np.asarray(ground_truth, dtype=np.int64)
    n, m = sims.shape
    if truth.shape != (n,) or np.any(truth < 0) or np.any(truth >= m):
        raise ValueError('ground truth must name one item per query')
    ranks = np.empty(n, dtype=np.int64)
    items = np.arange(m)
    for start in range(0, n, RANK_CHUNK):
        block = sims[start:start + RANK_CHUNK]
        gt = truth[start:start + RANK_CHUNK]
        true_scores = block[np.arange(len(block)), gt][:, None]
        higher = np.count_nonzero(block > true_scores, axis=1)
        tied_before = np.count_nonzero((block == true_scores) & (items[None, :] < gt[:, None]), axis=1)
        ranks[start:start + RANK_CHUNK] = higher + tied_before
    return ranks


def recall_at_k(similarities, ground_truth, k) -> float:
    m = np.shape(similarities)[1]
    if not 1 <= k <= m:
        raise ValueError(f'K={k} must be between 1 and the item count {m}')
    return float(np.mean(retrieval_ranks(similarities, ground_truth) < k))


@dataclass(frozen=True)
class RetrievalReport:
    direction: str
    recalls: Dict[int, float]

    def __post_init__(self):
        values = [self.recalls[k] for k in sorted(self.recalls)]
        if any(a > b for a, b in zip(values, values[1:])):
            raise AssertionError(f'recall not monotone in K: {self.recalls}')


def recall_report(direction, similarities, ks=DEFAULT_KS) -> RetrievalReport:
    ranks = retrieval_ranks(similarities, np.arange(similarities.shape[0]))
    m = similarities.shape[1]
    for k in ks:
        if not 1 <= k <= m:
            raise ValueError(f'K={k} must be between 1 and the item count {m}')
    return RetrievalReport(direction, {k: float(np.mean(ranks < k)) for k in sorted(ks)})


def mean_recall(reports: Sequence[RetrievalReport]) -> float:
    values = [value for report in reports for value in report.recalls.values()]
    return float(np.mean(values))


def _caption_tokens(texts, vocab):
    tokens = []
    for text in texts:
        ids = tokenize(text, vocab)
        if not ids:
            raise CorpusError(f'caption has no tokens: {text!r}')
        tokens.append(ids)
    return tokens


def count_duplicates(features, texts):
    seen = set()
    duplicates = 0
    for row, text in zip(features, texts):
        key = (row.tobytes(), text)
        if key in seen:
            duplicates += 1
        seen.add(key)
    return duplicates


def retrieval_eval(corpus: PairCorpus, checkpoint: Checkpoint, ks=DEFAULT_KS, fingerprint='') -> EvalReport:
    if not len(corpus):
        raise CorpusError('empty test corpus')
    if not corpus.is_one_to_one():
        raise CorpusError('retrieval needs exactly one caption per image')
    texts = [pair.caption_text for pair in corpus.pairs]
    features = FeatureResolver(corpus.base_dir).matrix([pair.feature_ref for pair in corpus.pairs])
    duplicates = count_duplicates(features, texts)
    if duplicates:
        logger.warning('%d of %d test items duplicate an earlier (feature, caption) item; '
                       'recall values are degenerate', duplicates, len(texts))

    params = checkpoint.params
    zv = encode_images(features, params)
    zt = encode_texts(_caption_tokens(texts, checkpoint.vocab), params)
    sims = cosine_similarity_matrix(zv, zt)
    reports = [
        recall_report('image_to_text', sims, ks),
        recall_report('text_to_image', np.ascontiguousarray(sims.T), ks),
    ]
    metrics = {}
    for report, prefix in zip(reports, ('i2t', 't2i')):
        for k, value in report.recalls.items():
            metrics[f'{prefix}_r{k}'] = value
    metrics['mean_recall'] = mean_recall(reports)
    metrics['pairs'] = len(texts)
    metrics['duplicates'] = duplicates
    return EvalReport(task='retrieval', metrics=metrics, fingerprint=fingerprint)


def accuracy(predictions, labels) -> float:
    predictions, labels = list(predictions), list(labels)
    if len(predictions) != len(labels) or not labels:
        raise ValueError('predictions and labels must be non-empty and the same length')
    return float(sum(bool(p == y) for p, y in zip(predictions, labels)) / len(labels))


def per_class_accuracy(predictions, labels):
    totals, hits = {}, {}
    for p, y in zip(predictions, labels):
        totals[y] = totals.get(y, 0) + 1
        hits[y] = hits.get(y, 0) + bool(p == y)
    return {label: hits[label] / totals[label] for label in sorted(totals)}


@dataclass
class ClassPromptSet:
    prompts: Dict[str, List[str]]

    def __post_init__(self):
        empty = [name for name, texts in self.prompts.items() if not texts]
        if not self.prompts or empty:
            raise ValidationFailed(f'every class needs at least one prompt (missing: {empty})')

    @property
    def classes(self):
        return list(self.prompts)

    @classmethod
    def from_templates(cls, classes, templates=None):
        templates = templates or template_pool(TemplateKind.GENERAL)
        return cls({name: [fill_template(t, {'class': name}).text for t in templates] for name in classes})


def normalize_rows(matrix):
    return matrix / np.linalg.norm(matrix, axis=1, keepdims=True)


def class_embeddings(prompts: ClassPromptSet, checkpoint: Checkpoint) -> np.ndarray:
    """L2-normalized mean prompt embedding per class, in ``prompts.classes`` order."""
    rows = []
    for name in prompts.classes:
        # prompts are encoded in sorted order so the mean does not depend on their listing
        texts = sorted(prompts.prompts[name])
        rows.append(encode_texts(_caption_tokens(texts, checkpoint.vocab), checkpoint.params).mean(axis=0))
    return normalize_rows(np.vstack(rows))


def zero_shot_predict(image_embeddings, class_matrix) -> np.ndarray:
    return np.argmax(image_embeddings @ normalize_rows(as_dense(class_matrix)).T, axis=1)


def zero_shot_classify(features, labels, prompts: ClassPromptSet, checkpoint: Checkpoint, fingerprint='') -> EvalReport:
    features = as_dense(features)
    if len(features) != len(labels):
        raise ValueError('one label per image is required')
    zv = encode_images(features, checkpoint.params)
    classes = prompts.classes
    predicted = [classes[i] for i in zero_shot_predict(zv, class_embeddings(prompts, checkpoint))]
    return EvalReport(
        task='zeroshot',
        metrics={'accuracy': accuracy(predicted, labels), 'images': len(labels), 'classes': len(classes)},
        per_class=per_class_accuracy(predicted, labels),
        fingerprint=fingerprint,
        details={'predictions': predicted},
    )


@dataclass
class ProbeHead:
    weight: np.ndarray
    bias: np.ndarray
    classes: List[str] = field(default_factory=list)

    def logits(self, embeddings):
        return embeddings @ self.weight + self.bias

    def predict(self, embeddings) -> np.ndarray:
        return np.argmax(self.logits(embeddings), axis=1)

    def predict_labels(self, embeddings):
        return [self.classes[i] for i in self.predict(embeddings)]


def _softmax_cross_entropy(logits, targets):
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    n = len(targets)
    loss = -float(np.mean(log_probs[np.arange(n), targets]))
    grad = np.exp(log_probs)
    grad[np.arange(n), targets] -= 1.0
    return loss, grad / n


def embed_for_probe(features, params: EncoderParams) -> np.ndarray:
    """z_v = f_v(I) for the whole labeled set, computed once."""
    return encode_images(as_dense(features), params)


def train_linear_probe(features, labels, checkpoint: Checkpoint, config: ProbeConfig = None, fingerprint=''):
    """Train a softmax head on frozen image embeddings; early-stops on validation loss."""
    config = config or ProbeConfig()
    labels = list(labels)
    classes = sorted(set(labels))
    if len(classes) < 2:
        raise ValidationFailed('linear probe needs at least two classes')
    if len(labels) != len(features):
        raise ValueError('one label per image is required')

    before = checkpoint.params.digest()
    embeddings = embed_for_probe(features, checkpoint.params)
    targets = np.array([classes.index(label) for label in labels])

    order = np.random.default_rng(config.seed).permutation(len(labels))
    n_val = min(len(labels) - 1, max(1, int(round(len(labels) * config.val_fraction))))
    val_index, train_index = order[:n_val], order[n_val:]
    z_train, y_train = embeddings[train_index], targets[train_index]
    z_val, y_val = embeddings[val_index], targets[val_index]

    tensors = {'weight': np.zeros((embeddings.shape[1], len(classes))), 'bias': np.zeros(len(classes))}
    state = AdamState()
    best = (np.inf, tensors, 0)
    waited = 0
    epochs_run = 0
    for epoch in range(config.max_epochs):
        epochs_run = epoch + 1
        logits = z_train @ tensors['weight'] + tensors['bias']
        _, grad = _softmax_cross_entropy(logits, y_train)
        grads = {'weight': z_train.T @ grad, 'bias': grad.sum(axis=0)}
        tensors, state = adam_step(tensors, grads, state, config.learning_rate)
        val_loss, _ = _softmax_cross_entropy(z_val @ tensors['weight'] + tensors['bias'], y_val)
        if val_loss < best[0]:
            best = (val_loss, tensors, epoch)
            waited = 0
        else:
            waited += 1
            if waited >= config.patience:
                break

    head = ProbeHead(best[1]['weight'], best[1]['bias'], classes)
    if checkpoint.params.digest() != before:
        raise FreezeViolation('encoder parameters changed during probe training')

    val_pred = [classes[i] for i in head.predict(z_val)]
    val_true = [classes[i] for i in y_val]
    report = EvalReport(
        task='probe',
        metrics={
            'train_accuracy': accuracy(head.predict(z_train), y_train),
            'val_accuracy': accuracy(val_pred, val_true),
            'epochs': epochs_run,
            'best_epoch': best[2] + 1,
            'classes': len(classes),
        },
        per_class=per_class_accuracy(val_pred, val_true),
        fingerprint=fingerprint,
        details={'encoder_digest': before},
    )
    return head, report


def labeled_features(records: Sequence, base_dir):
    """Features and class labels of classification records, resolved next to their manifest."""
    resolver = FeatureResolver(base_dir)
    labels = [record.kind.class_label for record in records]
    return resolver.matrix([record.meta.feature_ref for record in records]), labels


def prompts_for(labels, overrides: Mapping[str, Sequence[str]] = None) -> ClassPromptSet:
    classes = sorted(set(labels))
    if overrides:
        return ClassPromptSet({name: list(overrides.get(name, ())) for name in classes})
    return ClassPromptSet.from_templates(classes)
