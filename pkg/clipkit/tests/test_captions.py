import json
import tempfile
from pathlib import Path

from django.test import SimpleTestCase, override_settings

from clipkit.captions import (
    ABSOLUTE_POOL,
    DESCRIPTION_POOL,
    TEMPLATES,
    TEMPLATES_BY_ID,
    Caption,
    RuleBasedVerifier,
    TemplateKind,
    Verdict,
    derive_rng,
    export_pairs,
    fill_template,
    load_verifier,
    summarize_objects,
    synthesize_captions,
    synthesize_corpus,
    verify_caption,
)
from clipkit.corpus import read_pairs
from clipkit.exceptions import SynthesisError
from clipkit.records import (
    AnnotationRecord,
    BoundingBox,
    Classification,
    Detection,
    ImageMeta,
    NativeCaptions,
    Split,
)


def meta(image_id, source='src', split=Split.TRAIN, size=100):
    return ImageMeta(image_id, size, size, source, split, f'#{image_id}')


def classification(image_id, label='T-72', **kwargs):
    return AnnotationRecord(meta(image_id, **kwargs), Classification(label))


def detection(image_id, entries, **kwargs):
    return AnnotationRecord(meta(image_id, **kwargs), Detection(tuple(entries)))


def native(image_id, texts, **kwargs):
    return AnnotationRecord(meta(image_id, **kwargs), NativeCaptions(tuple(texts)))


class RejectEverything:
    def verify(self, caption):
        return Verdict(False, 'rejected for the test')


class SummarizeObjectsTests(SimpleTestCase):
    def test_counts_descending(self):
        entries = [('ship', None), ('bridge', None), ('ship', None)]
        self.assertEqual(summarize_objects(entries), 'two ships and one bridge')

    def test_single(self):
        self.assertEqual(summarize_objects([('tank', None)]), 'one tank')

    def test_ties_are_lexicographic(self):
        entries = [('ship', None)] * 3 + [('aircraft', None)] * 3
        self.assertEqual(summarize_objects(entries), 'three aircrafts and three ships')

    def test_three_classes_and_digits(self):
        entries = [('harbor', None)] * 12 + [('ship', None)] * 2 + [('bus', None)] * 2
        self.assertEqual(summarize_objects(entries), '12 harbors, two bus and two ships')


class FillTemplateTests(SimpleTestCase):
    def test_general(self):
        caption = fill_template(TEMPLATES_BY_ID['g-01'], {'class': 'tank'})
        self.assertEqual(caption.text, 'A SAR image of the tank')

    def test_complex(self):
        caption = fill_template(TEMPLATES_BY_ID['c-01'], {'class': 'bridge'})
        self.assertEqual(caption.text, 'A SAR image reveals the distinct texture and structure of the bridge.')

    def test_absolute(self):
        caption = fill_template(TEMPLATES_BY_ID['a-01'], {'classes': 'two ships', 'location': 'upper left'})
        self.assertEqual(caption.text, 'A SAR image of two ships located in the upper left of the image.')
        self.assertIs(caption.kind, TemplateKind.ABSOLUTE_REGION)

    def test_missing_slot_is_named(self):
        with self.assertRaisesMessage(ValueError, 'missing slot [location2]'):
            fill_template(TEMPLATES_BY_ID['r-01'], {
                'class1': 'ship', 'location1': 'center', 'relative_direction': 'above', 'class2': 'bridge',
            })

    def test_pools(self):
        kinds = [t.kind for t in TEMPLATES]
        self.assertEqual(kinds.count(TemplateKind.GENERAL), 5)
        self.assertEqual(kinds.count(TemplateKind.COMPLEX), 5)
        self.assertEqual(len({t.template_id for t in TEMPLATES}), len(TEMPLATES))


class VerifyCaptionTests(SimpleTestCase):
    def check(self, text):
        return verify_caption(Caption(text, 'x', TemplateKind.GENERAL))

    def test_accepts_plain_caption(self):
        self.assertTrue(self.check('A SAR image of the tank').accepted)

    def test_rejects_unfilled_slot(self):
        self.assertEqual(self.check('A SAR image of the [class]'), Verdict(False, 'unfilled slot'))

    def test_rejects_empty(self):
        self.assertEqual(self.check(''), Verdict(False, 'empty'))

    def test_rejects_lowercase_start_and_bad_ending(self):
        self.assertFalse(self.check('a SAR image').accepted)
        self.assertFalse(self.check('A SAR image,').accepted)
        self.assertFalse(self.check('A (SAR image.').accepted)

    def test_every_template_fills_to_an_accepted_caption(self):
        slots = {
            'class': 'tank', 'classes': 'two tanks', 'location': 'center', 'class1': 'ship',
            'location1': 'upper left', 'relative_direction': 'above', 'class2': 'bridge', 'location2': 'center',
        }
        for template in TEMPLATES:
            self.assertTrue(verify_caption(fill_template(template, slots)).accepted, template.template_id)

    def test_default_verifier_is_rule_based(self):
        self.assertIsInstance(load_verifier(), RuleBasedVerifier)

    @override_settings(SARCLIP={'CAPTION_VERIFIER': 'clipkit.tests.test_captions.RejectEverything'})
    def test_verifier_is_pluggable(self):
        self.assertIsInstance(load_verifier(), RejectEverything)


class SynthesizeCaptionsTests(SimpleTestCase):
    def test_classification_draws_without_replacement(self):
        captions = synthesize_captions(classification('m1'), derive_rng(0, 'm1'), n=5)
        self.assertEqual(len(captions), 5)
        self.assertEqual(len({c.template_id for c in captions}), 5)
        self.assertTrue(all(c.kind in (TemplateKind.GENERAL, TemplateKind.COMPLEX) for c in captions))
        self.assertTrue(all('T-72' in c.text for c in captions))

    def test_more_captions_than_pool(self):
        captions = synthesize_captions(classification('m1'), derive_rng(0, 'm1'), n=12)
        self.assertEqual(len(captions), 12)
        self.assertEqual(len({c.template_id for c in captions[:len(DESCRIPTION_POOL)]}), len(DESCRIPTION_POOL))

    def test_single_target_has_no_relative_caption(self):
        record = detection('d1', [('ship', BoundingBox(0, 0, 40, 40))])
        captions = synthesize_captions(record, derive_rng(1, 'd1'))
        self.assertEqual(len(captions), 5)
        self.assertNotIn(TemplateKind.RELATIVE_REGION, [c.kind for c in captions])
        self.assertEqual([c.kind for c in captions].count(TemplateKind.ABSOLUTE_REGION), 3)

    def test_detection_mix(self):
        record = detection('d2', [('ship', BoundingBox(0, 0, 40, 40)), ('bridge', BoundingBox(60, 60, 95, 95))])
        captions = synthesize_captions(record, derive_rng(1, 'd2'))
        self.assertEqual([c.kind for c in captions], [
            TemplateKind.GENERAL, TemplateKind.GENERAL,
            TemplateKind.ABSOLUTE_REGION, TemplateKind.ABSOLUTE_REGION,
            TemplateKind.RELATIVE_REGION,
        ])
        self.assertIn('one bridge and one ship', captions[0].text)
        relative = captions[4].text
        self.assertTrue(
            ('ship in the upper left' in relative and 'above the bridge in the bottom right' in relative)
            or ('bridge in the bottom right' in relative and 'below the ship in the upper left' in relative),
            relative,
        )

    def test_coincident_targets_fall_back_to_absolute(self):
        record = detection('d3', [('ship', BoundingBox(10, 10, 30, 30)), ('tank', BoundingBox(15, 15, 25, 25))])
        kinds = [c.kind for c in synthesize_captions(record, derive_rng(4, 'd3'))]
        self.assertNotIn(TemplateKind.RELATIVE_REGION, kinds)
        self.assertEqual(len(kinds), 5)

    def test_absolute_caption_names_targets_of_one_region(self):
        record = detection('d4', [
            ('ship', BoundingBox(0, 0, 40, 40)), ('ship', BoundingBox(5, 5, 30, 30)),
            ('tank', BoundingBox(70, 70, 99, 99)),
        ])
        absolutes = [c.text for c in synthesize_captions(record, derive_rng(2, 'd4'))
                     if c.kind is TemplateKind.ABSOLUTE_REGION]
        self.assertEqual(len(absolutes), 2)
        self.assertTrue(any('two ships' in t and 'upper left' in t for t in absolutes), absolutes)
        self.assertTrue(any('one tank' in t and 'bottom right' in t for t in absolutes), absolutes)

    def test_native_captions_pass_through(self):
        texts = ['A ship at sea', 'Two ships', 'Calm water.']
        captions = synthesize_captions(native('c1', texts), derive_rng(0, 'c1'), n=5)
        self.assertEqual([c.text for c in captions], texts)
        self.assertTrue(all(c.kind is TemplateKind.NATIVE for c in captions))

    def test_deterministic_and_thread_independent(self):
        records = [classification(f'm{i}', label=f'class-{i % 3}') for i in range(30)]
        records += [detection(f'd{i}', [('ship', BoundingBox(i, i, i + 20, i + 20)),
                                         ('tank', BoundingBox(60, 10, 90, 30))]) for i in range(20)]
        one = synthesize_corpus(records, seed=42, threads=1)
        four = synthesize_corpus(records, seed=42, threads=4)
        self.assertEqual(one, four)
        self.assertNotEqual(one, synthesize_corpus(records, seed=43, threads=1))
        self.assertTrue(all(verify_caption(c).accepted for captions in one for c in captions))

    def test_subseed_depends_only_on_seed_and_image(self):
        record = classification('m5')
        alone = synthesize_corpus([record], seed=9)[0]
        among = synthesize_corpus([classification('m0'), record, classification('m9')], seed=9)[1]
        self.assertEqual(alone, among)

    def test_zero_captions_requested(self):
        with self.assertRaises(ValueError):
            synthesize_captions(classification('m1'), derive_rng(0, 'm1'), n=0)


class ExportPairsTests(SimpleTestCase):
    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.out = Path(self._tmp.name) / 'pairs.jsonl'

    def tearDown(self):
        self._tmp.cleanup()

    def test_mstar_scale_counts(self):
        records = [classification(f'img_{i:05d}', label=('T-72', 'BMP2', '2S1')[i % 3], source='mstar')
                   for i in range(3046)]
        stats = export_pairs(records, synthesize_corpus(records, seed=0), self.out)
        self.assertEqual(stats.images_by_source, {'mstar': 3046})
        self.assertEqual(stats.captions_by_source, {'mstar': 15230})
        self.assertEqual(stats.rejected, 0)
        self.assertEqual(len(read_pairs(self.out)), 15230)

    def test_empty_record_list(self):
        stats = export_pairs([], [], self.out, fingerprint='abc')
        self.assertEqual(stats.total_images, 0)
        self.assertEqual(stats.total_captions, 0)
        lines = self.out.read_text(encoding='utf-8').splitlines()
        self.assertEqual(len(lines), 1)
        self.assertEqual(json.loads(lines[0])['fingerprint'], 'abc')
        self.assertEqual(len(read_pairs(self.out)), 0)

    def test_test_split_keeps_one_caption(self):
        records = [classification('a', split=Split.TEST), classification('b'),
                   native('c', ['One ship', 'Two ships'], split=Split.TEST)]
        stats = export_pairs(records, synthesize_corpus(records, seed=1), self.out)
        corpus = read_pairs(self.out)
        self.assertTrue(corpus.split(Split.TEST).is_one_to_one())
        self.assertEqual(len(corpus.split(Split.TEST)), 2)
        self.assertEqual(stats.pairs_by_split, {'test': 2, 'train': 5})

    def test_pairs_ordered_by_image_id(self):
        records = [classification('b'), classification('a'), classification('c')]
        export_pairs(records, synthesize_corpus(records, seed=3), self.out)
        ids = [p.image_id for p in read_pairs(self.out).pairs]
        self.assertEqual(ids, sorted(ids))

    def test_rejection_rate_above_threshold(self):
        records = [classification('a')]
        with self.assertRaisesMessage(SynthesisError, 'failed verification'):
            export_pairs(records, synthesize_corpus(records, seed=0), self.out, verifier=RejectEverything())
        self.assertFalse(self.out.exists())

    def test_rejected_native_captions_do_not_count_towards_the_rate(self):
        records = [classification(f'm{i}') for i in range(20)] + [native('c', ['lowercase start', 'Fine caption'])]
        stats = export_pairs(records, synthesize_corpus(records, seed=0), self.out)
        self.assertEqual(stats.rejected, 0)
        self.assertEqual(stats.rejected_native, 1)
        self.assertEqual(stats.captions_by_source['src'], 101)

    def test_byte_identical_runs(self):
        records = [classification(f'm{i}') for i in range(10)]
        export_pairs(records, synthesize_corpus(records, seed=5), self.out, fingerprint='fp')
        first = self.out.read_bytes()
        export_pairs(records, synthesize_corpus(records, seed=5, threads=3), self.out, fingerprint='fp')
        self.assertEqual(first, self.out.read_bytes())

    def test_absolute_pool_size(self):
        self.assertEqual(len(ABSOLUTE_POOL), 3)
