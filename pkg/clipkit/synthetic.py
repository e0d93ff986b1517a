"""Clustered desk-scale benchmark with a known latent structure.

Every image shows one of eight target classes, placed in one of the five
regions, one to four times. Its feature vector is the sum of one latent
vector per factor (class, region, count) plus a per-domain shift and noise.
The ``optical`` and ``sar`` domains share the latent vectors; ``sar`` adds a
fixed shift and multiplicative gamma speckle, so a model trained on one
transfers to the other.

Output directory layout::

    features.f64 (+ .index.json)   every train and test image
    train.pairs.jsonl              captions for training, several kinds
    test.pairs.jsonl               one absolute-region caption per image
    test.cls.csv                   class labels of the test images
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .captions import ABSOLUTE_POOL, DESCRIPTION_POOL, TemplateKind, count_phrase, fill_template
from .config import TrainConfig, fingerprint
from .corpus import PairRecord, write_pairs
from .exceptions import ConfigError
from .features import write_feature_store
from .ingest import write_classification_manifest
from .records import AnnotationRecord, Classification, ImageMeta, Split
from .regions import RegionLabel

logger = logging.getLogger(__name__)

CLASS_NAMES = ('tank', 'ship', 'bridge', 'aircraft', 'harbor', 'truck', 'oil-tank', 'building')
MAX_COUNT = 4
IMAGE_SIZE = 256
STORE_NAME = 'features.f64'
DOMAINS = ('optical', 'sar')

# one training caption in four is a class-only description; the slot
# rotates per pass over the scenes so every scene also gets region captions
DESCRIPTION_EVERY = 4

BENCHMARK_TRAIN = {'batch_size': 64, 'learning_rate': 3e-3, 'epochs': 150, 'warmup_steps': 50}


def benchmark_train_config(**changes) -> TrainConfig:
    """Training settings that converge on the benchmark in seconds on one core."""
    return TrainConfig(**{**BENCHMARK_TRAIN, **changes})


@dataclass(frozen=True)
class SyntheticSpec:
    domain: str = 'sar'
    train_pairs: int = 512
    test_pairs: int = 128
    classes: int = 8
    dim: int = 48
    noise: float = 0.1
    speckle_looks: float = 16.0
    domain_shift: float = 0.5
    seed: int = 0
    factor_seed: int = 1234

    def __post_init__(self):
        if self.domain not in DOMAINS:
            raise ConfigError(f'unknown domain {self.domain!r}; choose from {DOMAINS}')
        if not 1 <= self.classes <= len(CLASS_NAMES):
            raise ConfigError(f'classes must be between 1 and {len(CLASS_NAMES)}')
        if self.test_pairs > self.combo_count:
            raise ConfigError(f'at most {self.combo_count} distinct test images exist for {self.classes} classes')
        if self.train_pairs < 1 or self.test_pairs < 1 or self.dim < 1:
            raise ConfigError('train_pairs, test_pairs and dim must be positive')

    @property
    def combo_count(self):
        return self.classes * len(RegionLabel) * MAX_COUNT

    @property
    def source(self):
        return f'synthetic-{self.domain}'

    @property
    def fingerprint(self):
        return fingerprint(asdict(self))


@dataclass(frozen=True)
class Scene:
    class_index: int
    region: RegionLabel
    count: int


def scenes(classes):
    regions = list(RegionLabel)
    return [
        Scene(c, region, count)
        for c in range(classes)
        for region in regions
        for count in range(1, MAX_COUNT + 1)
    ]


class LatentFactors:
    """Latent vectors shared by both domains; the shift depends on the domain."""

    def __init__(self, spec: SyntheticSpec):
        rng = np.random.default_rng(spec.factor_seed)
        self.classes = rng.normal(size=(len(CLASS_NAMES), spec.dim))
        self.regions = rng.normal(size=(len(RegionLabel), spec.dim))
        self.counts = rng.normal(size=(MAX_COUNT, spec.dim))
        shift_rng = np.random.default_rng([spec.factor_seed, DOMAINS.index(spec.domain)])
        self.shift = shift_rng.normal(size=spec.dim) * (spec.domain_shift if spec.domain == 'sar' else 0.0)
        self.spec = spec

    def clean(self, scene: Scene):
        region_index = list(RegionLabel).index(scene.region)
        return (self.classes[scene.class_index] + self.regions[region_index]
                + self.counts[scene.count - 1] + self.shift)

    def sample(self, scene: Scene, rng):
        x = self.clean(scene)
        if self.spec.domain == 'sar':
            looks = self.spec.speckle_looks
            x = x * rng.gamma(looks, 1.0 / looks, size=x.shape)
        return x + rng.normal(scale=self.spec.noise, size=x.shape)


def _describes(index, scene_count):
    return (index + index // scene_count) % DESCRIPTION_EVERY == DESCRIPTION_EVERY - 1


def scene_caption(scene: Scene, template, image_id):
    name = CLASS_NAMES[scene.class_index]
    if template.kind is TemplateKind.ABSOLUTE_REGION:
        slots = {'classes': count_phrase(scene.count, name), 'location': scene.region.phrase}
    else:
        slots = {'class': name}
    return fill_template(template, slots, image_id)


@dataclass
class SyntheticCorpus:
    directory: Path
    train_path: Path
    test_path: Path
    manifest_path: Path
    store_path: Path
    fingerprint: str


def generate(spec: SyntheticSpec, out_dir) -> SyntheticCorpus:
    """Write the benchmark into ``out_dir``; a pure function of ``spec``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    factors = LatentFactors(spec)
    all_scenes = scenes(spec.classes)
    feature_rng, caption_rng, split_rng = (
        np.random.default_rng(s) for s in np.random.SeedSequence(spec.seed).spawn(3)
    )
    test_scenes = [all_scenes[i] for i in np.sort(split_rng.choice(len(all_scenes), spec.test_pairs, replace=False))]
    train_scenes = [all_scenes[i % len(all_scenes)] for i in range(spec.train_pairs)]

    keys, rows, train, test, labeled = [], [], [], [], []
    for split, chosen, out in ((Split.TRAIN, train_scenes, train), (Split.TEST, test_scenes, test)):
        for index, scene in enumerate(chosen):
            image_id = f'{spec.domain}-{split.value}-{index:05d}'
            feature_ref = f'{STORE_NAME}#{image_id}'
            keys.append(image_id)
            rows.append(factors.sample(scene, feature_rng))
            describe = split is Split.TRAIN and _describes(index, len(all_scenes))
            pool = DESCRIPTION_POOL if describe else ABSOLUTE_POOL
            caption = scene_caption(scene, pool[int(caption_rng.integers(len(pool)))], image_id)
            out.append(PairRecord(
                image_id=image_id,
                source=spec.source,
                split=split,
                feature_ref=feature_ref,
                caption_text=caption.text,
                template_id=caption.template_id,
                template_kind=caption.kind.value,
            ))
            if split is Split.TEST:
                meta = ImageMeta(image_id, IMAGE_SIZE, IMAGE_SIZE, spec.source, split, feature_ref)
                labeled.append(AnnotationRecord(meta, Classification(CLASS_NAMES[scene.class_index])))

    fp = spec.fingerprint
    corpus = SyntheticCorpus(
        directory=out_dir,
        train_path=out_dir / 'train.pairs.jsonl',
        test_path=out_dir / 'test.pairs.jsonl',
        manifest_path=out_dir / 'test.cls.csv',
        store_path=out_dir / STORE_NAME,
        fingerprint=fp,
    )
    write_feature_store(corpus.store_path, keys, np.vstack(rows), fingerprint=fp)
    write_pairs(train, corpus.train_path, fingerprint=fp)
    write_pairs(test, corpus.test_path, fingerprint=fp)
    write_classification_manifest(labeled, corpus.manifest_path)
    logger.info('synthetic %s corpus: %d train / %d test pairs in %s',
                spec.domain, len(train), len(test), out_dir)
    return corpus
