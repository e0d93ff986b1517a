import tempfile
from collections import Counter
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from clipkit.corpus import read_pairs
from clipkit.exceptions import ConfigError
from clipkit.features import FeatureStore
from clipkit.ingest import parse_classification_manifest
from clipkit.synthetic import CLASS_NAMES, LatentFactors, SyntheticSpec, generate, scenes


class SyntheticCorpusTests(SimpleTestCase):
    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self._tmp.name)

    def tearDown(self):
        self._tmp.cleanup()

    def test_layout_and_counts(self):
        corpus = generate(SyntheticSpec(), self.dir / 'sar')
        train = read_pairs(corpus.train_path)
        test = read_pairs(corpus.test_path)
        self.assertEqual(len(train), 512)
        self.assertEqual(len(test), 128)
        self.assertTrue(test.is_one_to_one())
        self.assertEqual(train.fingerprint, corpus.fingerprint)
        store = FeatureStore.open(corpus.store_path)
        self.assertEqual(store.matrix.shape, (640, 48))
        self.assertEqual(store.fingerprint, corpus.fingerprint)

    def test_test_captions_are_absolute_region(self):
        corpus = generate(SyntheticSpec(), self.dir)
        kinds = Counter(pair.template_kind for pair in read_pairs(corpus.test_path).pairs)
        self.assertEqual(kinds, Counter({'absolute_region': 128}))
        train_kinds = Counter(pair.template_kind for pair in read_pairs(corpus.train_path).pairs)
        self.assertEqual(train_kinds['absolute_region'], 384)
        self.assertEqual(train_kinds['general'] + train_kinds['complex'], 128)

    def test_every_scene_gets_region_captions(self):
        corpus = generate(SyntheticSpec(), self.dir)
        described = Counter()
        for pair in read_pairs(corpus.train_path).pairs:
            if pair.template_kind == 'absolute_region':
                described[pair.image_id] += 1
        index_of = {f'sar-train-{i:05d}': i for i in range(512)}
        covered = {index_of[image_id] % 160 for image_id in described}
        self.assertEqual(len(covered), 160)

    def test_class_manifest_matches_test_split(self):
        corpus = generate(SyntheticSpec(classes=3, test_pairs=20), self.dir)
        records = parse_classification_manifest(corpus.manifest_path)
        self.assertEqual(len(records), 20)
        self.assertTrue({r.kind.class_label for r in records} <= set(CLASS_NAMES[:3]))
        test_ids = [pair.image_id for pair in read_pairs(corpus.test_path).pairs]
        self.assertEqual(sorted(r.image_id for r in records), sorted(test_ids))

    def test_regeneration_is_byte_identical(self):
        first = generate(SyntheticSpec(seed=3), self.dir / 'a')
        second = generate(SyntheticSpec(seed=3), self.dir / 'b')
        for name in ('train.pairs.jsonl', 'test.pairs.jsonl', 'test.cls.csv', 'features.f64'):
            self.assertEqual((first.directory / name).read_bytes(), (second.directory / name).read_bytes(), name)

    def test_domains_share_captions_but_not_features(self):
        optical = generate(SyntheticSpec(domain='optical'), self.dir / 'optical')
        sar = generate(SyntheticSpec(domain='sar'), self.dir / 'sar')
        texts = [[p.caption_text for p in read_pairs(c.train_path).pairs] for c in (optical, sar)]
        self.assertEqual(texts[0], texts[1])
        self.assertFalse(np.allclose(FeatureStore.open(optical.store_path).matrix,
                                     FeatureStore.open(sar.store_path).matrix))
        self.assertNotEqual(optical.fingerprint, sar.fingerprint)

    def test_only_sar_is_shifted(self):
        optical = LatentFactors(SyntheticSpec(domain='optical'))
        sar = LatentFactors(SyntheticSpec(domain='sar'))
        self.assertFalse(np.any(optical.shift))
        self.assertTrue(np.any(sar.shift))
        self.assertTrue(np.array_equal(optical.classes, sar.classes))

    def test_scene_grid(self):
        grid = scenes(8)
        self.assertEqual(len(grid), 160)
        self.assertEqual(len(set(grid)), 160)

    def test_invalid_specs(self):
        for changes in ({'domain': 'infrared'}, {'classes': 9}, {'test_pairs': 161}, {'dim': 0}):
            with self.assertRaises(ConfigError, msg=changes):
                SyntheticSpec(**changes)
