"""Symmetric InfoNCE training for the two towers.

Stage 1 trains from random initialization on a source-domain pair corpus;
stage 2 starts from a stage-1 checkpoint and fine-tunes on the target
corpus. Both use the same loop: seeded shuffling, last partial batch
dropped, Adam with warmup + cosine schedule, optional layer freezing.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .checkpoints import Checkpoint
from .config import TAU_MAX, TAU_MIN, TrainConfig
from .corpus import PairCorpus
from .embed import (
    EncoderParams,
    Vocab,
    as_dense,
    cosine_similarity_matrix,
    image_backward,
    image_forward,
    init_params,
    text_backward,
    text_forward,
    tokenize,
)
from .exceptions import CheckpointError, ConfigError, CorpusError, NumericalError
from .features import FeatureResolver
from .optim import AdamState, adam_step, clip_gradients, global_norm, lr_at_step

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LossReport:
    step: int
    epoch: int
    loss: float
    lr: float
    grad_norm: float
    tau: float

    def as_row(self):
        return [self.step, self.epoch, repr(self.loss), repr(self.lr), repr(self.grad_norm), repr(self.tau)]


LOSS_LOG_FORMAT_VERSION = 1
LOSS_COLUMNS = ['step', 'epoch', 'loss', 'lr', 'grad_norm', 'tau']


def _directional(logits):
    """Mean cross-entropy of each row against its diagonal entry, plus the row softmax."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    log_probs = shifted - log_norm[:, None]
    return -float(np.mean(np.diag(log_probs))), np.exp(log_probs)


def infonce_loss_and_grads(zv, zt, tau):
    """Symmetric InfoNCE over matched rows of ``zv`` and ``zt``.

    Returns ``(loss, dL/dzv, dL/dzt, dL/dtau)``.
    """
    if not tau > 0:
        raise NumericalError(f'temperature must be positive, got {tau}')
    zv, zt = as_dense(zv), as_dense(zt)
    if zv.shape != zt.shape or zv.shape[0] < 1:
        raise ValueError(f'need matched non-empty batches, got {zv.shape} and {zt.shape}')
    n = zv.shape[0]
    logits = cosine_similarity_matrix(zv, zt) / tau
    image_to_text, row_probs = _directional(logits)
    text_to_image, col_probs = _directional(np.ascontiguousarray(logits.T))
    loss = 0.5 * (image_to_text + text_to_image) + 0.0

    eye = np.eye(n)
    grad_logits = ((row_probs - eye) + (col_probs - eye).T) / (2 * n)
    d_zv = grad_logits @ zt / tau
    d_zt = grad_logits.T @ zv / tau
    d_tau = -float(np.sum(grad_logits * logits)) / tau
    return loss, d_zv, d_zt, d_tau


def frozen_names(params: EncoderParams, image_layers=None, text_layers=None, learnable_tau=False):
    """Names of tensors that must not move; ``None`` layers means the whole tower trains."""
    frozen = set()
    for tower, keep in (('image', image_layers), ('text', text_layers)):
        if keep is None:
            continue
        groups = params.layer_groups(tower)
        for group in groups[:max(0, len(groups) - keep)]:
            frozen.update(group)
    if not learnable_tau:
        frozen.add('log_tau')
    return frozen


def config_frozen_names(params, config: TrainConfig):
    return frozen_names(params, config.image_trainable_layers, config.text_trainable_layers, config.learnable_tau)


def batch_loss(params: EncoderParams, features, token_lists):
    zv, _ = image_forward(features, params)
    zt, _ = text_forward(token_lists, params)
    return infonce_loss_and_grads(zv, zt, params.tau)[0]


def loss_and_grads(params: EncoderParams, features, token_lists, frozen=()):
    zv, image_cache = image_forward(features, params)
    zt, text_cache = text_forward(token_lists, params)
    tau = params.tau
    loss, d_zv, d_zt, d_tau = infonce_loss_and_grads(zv, zt, tau)
    grads = {}
    grads.update(image_backward(d_zv, params, image_cache))
    grads.update(text_backward(d_zt, params, text_cache))
    grads['log_tau'] = np.array(d_tau * tau)
    for name in frozen:
        grads[name] = np.zeros_like(params[name])
    return loss, grads


@dataclass
class TrainingSet:
    features: np.ndarray
    tokens: List[List[int]]
    vocab: Vocab

    def __len__(self):
        return len(self.tokens)


def build_training_set(corpus: PairCorpus, vocab: Optional[Vocab] = None) -> TrainingSet:
    if not len(corpus):
        raise CorpusError('empty corpus')
    vocab = vocab or Vocab.build(pair.caption_text for pair in corpus.pairs)
    tokens = []
    for pair in corpus.pairs:
        ids = tokenize(pair.caption_text, vocab)
        if not ids:
            raise CorpusError(f'caption for {pair.image_id} has no tokens: {pair.caption_text!r}')
        tokens.append(ids)
    features = FeatureResolver(corpus.base_dir).matrix([pair.feature_ref for pair in corpus.pairs])
    return TrainingSet(features=features, tokens=tokens, vocab=vocab)


def _start_params(data: TrainingSet, config: TrainConfig, init: Optional[Checkpoint], seed):
    shape = config.model_shape
    fresh = init_params(
        data.features.shape[1], len(data.vocab), embed_dim=shape['embed_dim'], hidden=shape['hidden'],
        token_dim=shape['token_dim'], depth=shape['depth'], tau=config.tau, seed=seed,
    )
    if init is None:
        return fresh
    if init.vocab != data.vocab:
        raise CheckpointError('the corpus was tokenized with a different vocab than the init checkpoint')
    if init.params.shapes() != fresh.shapes():
        raise CheckpointError(f'shape mismatch with init checkpoint: {init.params.shapes()} vs {fresh.shapes()}')
    params = init.params.copy()
    if not config.learnable_tau:
        params = params.replace(log_tau=np.array(np.log(config.tau)))
    return params


def train_stage(data: TrainingSet, config: TrainConfig, init: Optional[Checkpoint] = None, fingerprint='',
                on_step: Optional[Callable[[LossReport], None]] = None):
    """Train one stage; returns the checkpoint (``stage1`` or ``stage2``) and the loss stream."""
    n = len(data)
    if n == 0:
        raise CorpusError('empty corpus')
    batch_size = config.batch_size
    steps_per_epoch = n // batch_size
    if steps_per_epoch == 0:
        raise CorpusError(f'corpus of {n} pairs is smaller than one batch of {batch_size}')
    total_steps = config.epochs * steps_per_epoch
    if config.warmup_steps >= total_steps:
        raise ConfigError(f'warmup_steps {config.warmup_steps} must be below total steps {total_steps}')

    init_seed, shuffle_seed = np.random.SeedSequence(config.seed).spawn(2)
    params = _start_params(data, config, init, init_seed)
    frozen = config_frozen_names(params, config)
    rng = np.random.default_rng(shuffle_seed)
    state = AdamState()
    log_tau_bounds = (math.log(TAU_MIN), math.log(TAU_MAX))
    reports = []

    step = 0
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        epoch_losses = []
        for batch in range(steps_per_epoch):
            index = order[batch * batch_size:(batch + 1) * batch_size]
            loss, grads = loss_and_grads(params, data.features[index], [data.tokens[i] for i in index], frozen)
            grad_norm = global_norm(grads)
            if not (math.isfinite(loss) and math.isfinite(grad_norm)):
                raise NumericalError(
                    f'non-finite loss at step {step} (epoch {epoch}): loss={loss} grad_norm={grad_norm} '
                    f'tau={params.tau}'
                )
            grads = clip_gradients(grads, config.grad_clip)
            lr = lr_at_step(step, config.base_lr, config.warmup_steps, total_steps)
            tensors, state = adam_step(
                params.tensors, grads, state, lr, config.beta1, config.beta2, config.eps, frozen,
            )
            if config.learnable_tau:
                tensors['log_tau'] = np.asarray(np.clip(tensors['log_tau'], *log_tau_bounds))
            report = LossReport(step, epoch, loss, lr, grad_norm, params.tau)
            params = EncoderParams(tensors, params.image_depth, params.text_depth)
            reports.append(report)
            epoch_losses.append(loss)
            if on_step is not None:
                on_step(report)
            step += 1
        logger.info('epoch %d/%d mean loss %.6f lr %.3g tau %.4g',
                    epoch + 1, config.epochs, float(np.mean(epoch_losses)), lr, params.tau)

    checkpoint = Checkpoint(
        stage_tag='stage2' if init is not None else 'stage1',
        params=params,
        vocab=data.vocab,
        config=config,
        fingerprint=fingerprint,
        optimizer=state,
    )
    return checkpoint, reports


def epoch_mean_losses(reports: Sequence[LossReport]):
    by_epoch: Dict[int, list] = {}
    for report in reports:
        by_epoch.setdefault(report.epoch, []).append(report.loss)
    return [float(np.mean(by_epoch[epoch])) for epoch in sorted(by_epoch)]


def steps_to_threshold(reports: Sequence[LossReport], threshold):
    """First step whose loss is at or below ``threshold``; ``None`` if never reached."""
    for report in reports:
        if report.loss <= threshold:
            return report.step
    return None


@dataclass
class GradcheckReport:
    max_rel_error: float
    per_tensor: Dict[str, float] = field(default_factory=dict)
    frozen: List[str] = field(default_factory=list)
    frozen_grads_zero: bool = True


def finite_diff_gradcheck(params: EncoderParams, features, token_lists, tau=None, h=1e-5, frozen=(),
                          floor=1e-4) -> GradcheckReport:
    """Compare analytic gradients with central differences for every trainable entry.

    Relative error is ``|a - n| / max(|a|, |n|, floor)``.
    """
    if tau is not None:
        params = params.replace(log_tau=np.array(np.log(tau)))
    frozen = set(frozen)
    _, grads = loss_and_grads(params, features, token_lists, frozen)
    report = GradcheckReport(max_rel_error=0.0, frozen=sorted(frozen))
    report.frozen_grads_zero = all(not np.any(grads[name]) for name in frozen)

    for name in params.names:
        if name in frozen:
            continue
        base = params[name]
        analytic = grads[name]
        worst = 0.0
        for index in np.ndindex(base.shape):
            plus, minus = np.array(base, dtype=np.float64), np.array(base, dtype=np.float64)
            plus[index] += h
            minus[index] -= h
            f_plus = batch_loss(params.replace(**{name: plus}), features, token_lists)
            f_minus = batch_loss(params.replace(**{name: minus}), features, token_lists)
            numeric = (f_plus - f_minus) / (2 * h)
            a = float(analytic[index])
            worst = max(worst, abs(a - numeric) / max(abs(a), abs(numeric), floor))
        report.per_tensor[name] = worst
        report.max_rel_error = max(report.max_rel_error, worst)
    return report


def random_instance(seed, batch=4, image_dim=6, vocab_size=10, embed_dim=8, hidden=8, token_dim=5, depth=2,
                    max_tokens=5):
    """A random small model and batch for gradient checks."""
    rng = np.random.default_rng(seed)
    params = init_params(image_dim, vocab_size, embed_dim=embed_dim, hidden=hidden, token_dim=token_dim,
                         depth=depth, seed=rng.integers(2 ** 32))
    # non-zero biases so every bias gradient is exercised
    params = params.replace(**{
        name: rng.normal(scale=0.1, size=params[name].shape) for name in params.names if name.endswith('.bias')
    })
    features = rng.normal(size=(batch, image_dim))
    tokens = [list(rng.integers(0, vocab_size, size=rng.integers(1, max_tokens + 1))) for _ in range(batch)]
    return params, features, tokens
