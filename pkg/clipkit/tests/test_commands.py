import io
import json
import tempfile
from contextlib import redirect_stderr, redirect_stdout
from pathlib import Path

from django.core.management import CommandError, call_command
from django.test import SimpleTestCase

from clipkit.checkpoints import load_checkpoint
from clipkit.cli import run
from clipkit.corpus import read_pairs
from clipkit.features import FeatureStore
from clipkit.reports import EvalReport, read_summary_rows, write_report

from .fixtures import BenchmarkMixin

QUICK_TRAIN = ['epochs=2', 'batch_size=64', 'learning_rate=0.003']


def quiet_call(*args, **options):
    return call_command(*args, stdout=io.StringIO(), stderr=io.StringIO(), **options)


def run_cli(argv):
    """Run the entry point; returns (exit code, captured stderr)."""
    err = io.StringIO()
    with redirect_stdout(io.StringIO()), redirect_stderr(err):
        code = run(argv)
    return code, err.getvalue()


class SynthCommandTests(SimpleTestCase):
    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self._tmp.name)
        manifests = self.dir / 'm'
        manifests.mkdir()
        (manifests / 'sardet.det.json').write_text(json.dumps({
            'images': [{'id': f'd{i}', 'width': 100, 'height': 100} for i in range(12)],
            'annotations': [
                {'image_id': f'd{i}', 'category': 'ship', 'bbox': [i, i, 20, 20]} for i in range(12)
            ] + [
                {'image_id': f'd{i}', 'category': 'harbor', 'bbox': [60, 60, 30, 30]} for i in range(0, 12, 2)
            ],
        }), encoding='utf-8')
        (manifests / 'mstar.cls.csv').write_text('image_id,class_label,split\n' + ''.join(
            f'm{i},{("T-72", "BMP2", "2S1")[i % 3]},{"test" if i % 4 == 0 else "train"}\n' for i in range(20)
        ), encoding='utf-8')
        self.manifests = manifests

    def tearDown(self):
        self._tmp.cleanup()

    def synth(self, name, **options):
        out = self.dir / name / 'pairs.jsonl'
        quiet_call('synth', manifests=str(self.manifests), out=str(out), seed=42, **options)
        return out

    def test_reruns_are_byte_identical(self):
        first = self.synth('a')
        second = self.synth('b')
        self.assertEqual(first.read_bytes(), second.read_bytes())
        self.assertEqual((first.parent / 'pairs.stats.json').read_bytes(),
                         (second.parent / 'pairs.stats.json').read_bytes())

    def test_thread_count_does_not_change_output(self):
        self.assertEqual(self.synth('a', threads=1).read_bytes(), self.synth('b', threads=4).read_bytes())

    def test_stats_and_fingerprint(self):
        out = self.synth('a')
        stats = json.loads((out.parent / 'pairs.stats.json').read_text(encoding='utf-8'))
        self.assertEqual(stats['images_by_source'], {'mstar': 20, 'sardet': 12})
        self.assertEqual(stats['captions_by_source'], {'mstar': 5 * 15 + 5, 'sardet': 60})
        corpus = read_pairs(out)
        self.assertEqual(corpus.fingerprint, stats['fingerprint'])
        self.assertEqual(corpus.pairs[0].feature_ref.split('#')[0], '../m/features.f64')

    def test_seed_changes_output(self):
        first = self.synth('a')
        out = self.dir / 'c' / 'pairs.jsonl'
        quiet_call('synth', manifests=str(self.manifests), out=str(out), seed=43)
        self.assertNotEqual(first.read_bytes(), out.read_bytes())

    def test_permissive_mode_drops_bad_records(self):
        (self.manifests / 'broken.cls.csv').write_text('image_id,class_label\nx1,\nx2,tank\n', encoding='utf-8')
        with self.assertRaises(CommandError) as ctx:
            self.synth('a')
        self.assertEqual(ctx.exception.returncode, 1)
        self.assertTrue(str(ctx.exception).startswith('validation:'))
        stats = json.loads((self.synth('b', strict=False).parent / 'pairs.stats.json').read_text(encoding='utf-8'))
        self.assertEqual(stats['images_by_source']['broken'], 1)


class PipelineCommandTests(BenchmarkMixin, SimpleTestCase):
    domains = ('optical', 'sar')

    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self._tmp.name)

    def tearDown(self):
        self._tmp.cleanup()

    def train(self, domain, name, **options):
        out = self.dir / name
        quiet_call('train', pairs=str(self.benchmarks[domain].train_path), out=str(out),
                   overrides=QUICK_TRAIN, **options)
        return out

    def test_stage_tags(self):
        stage1 = self.train('optical', 'stage1.ckpt')
        stage2 = self.train('sar', 'stage2.ckpt', init=str(stage1))
        self.assertEqual(load_checkpoint(stage1).stage_tag, 'stage1')
        checkpoint = load_checkpoint(stage2)
        self.assertEqual(checkpoint.stage_tag, 'stage2')
        self.assertEqual(checkpoint.vocab, load_checkpoint(stage1).vocab)
        self.assertEqual(checkpoint.meta['pairs'], 512)

    def test_loss_log(self):
        out = self.train('sar', 'model.ckpt')
        lines = (self.dir / 'model.ckpt.loss.tsv').read_text(encoding='utf-8').splitlines()
        self.assertEqual(lines[0], f'# format_version=1 fingerprint={load_checkpoint(out).fingerprint}')
        self.assertEqual(lines[1].split('\t'), ['step', 'epoch', 'loss', 'lr', 'grad_norm', 'tau'])
        self.assertEqual(len(lines), 2 + 16)

    def test_config_file_and_overrides(self):
        config = self.dir / 'run.json'
        config.write_text(json.dumps({'train': {'epochs': 1, 'batch_size': 128, 'seed': 5}}), encoding='utf-8')
        out = self.dir / 'model.ckpt'
        quiet_call('train', pairs=str(self.benchmarks['sar'].train_path), out=str(out), config=str(config),
                   overrides=['train.batch_size=256'])
        snapshot = load_checkpoint(out).config
        self.assertEqual((snapshot.epochs, snapshot.batch_size, snapshot.seed), (1, 256, 5))

    def test_eval_retrieval_report(self):
        checkpoint = self.train('sar', 'model.ckpt')
        report = self.dir / 'retrieval.json'
        quiet_call('eval', 'retrieval', ckpt=str(checkpoint), pairs=str(self.benchmarks['sar'].test_path),
                   k='1,5,10', out=str(report), label='sar-from-scratch')
        document = json.loads(report.read_text(encoding='utf-8'))
        recalls = {k: v for k, v in document['metrics'].items() if '_r' in k and k != 'mean_recall'}
        self.assertEqual(sorted(recalls), ['i2t_r1', 'i2t_r10', 'i2t_r5', 't2i_r1', 't2i_r10', 't2i_r5'])
        self.assertAlmostEqual(document['metrics']['mean_recall'], sum(recalls.values()) / 6, delta=1e-12)
        row = read_summary_rows(self.dir / 'retrieval.tsv')[0]
        self.assertEqual(row['label'], 'sar-from-scratch')
        self.assertEqual(row['task'], 'retrieval')

    def test_eval_report_path_defaults_to_checkpoint(self):
        checkpoint = self.train('sar', 'model.ckpt')
        quiet_call('eval', 'retrieval', ckpt=str(checkpoint), pairs=str(self.benchmarks['sar'].test_path), k='1,5,10')
        document = json.loads((self.dir / 'model.ckpt.retrieval.json').read_text(encoding='utf-8'))
        self.assertEqual(document['task'], 'retrieval')
        self.assertIn('i2t_r10', document['metrics'])
        self.assertEqual(read_summary_rows(self.dir / 'model.ckpt.retrieval.tsv')[0]['task'], 'retrieval')

    def test_eval_zeroshot_and_probe(self):
        checkpoint = self.train('sar', 'model.ckpt')
        manifest = str(self.benchmarks['sar'].manifest_path)
        quiet_call('eval', 'zeroshot', ckpt=str(checkpoint), manifest=manifest, out=str(self.dir / 'zs.json'))
        zero_shot = json.loads((self.dir / 'zs.json').read_text(encoding='utf-8'))
        self.assertEqual(zero_shot['metrics']['classes'], 8)
        self.assertEqual(zero_shot['metrics']['images'], 128)

        probe_out = self.dir / 'probe.ckpt'
        quiet_call('eval', 'probe', ckpt=str(checkpoint), manifest=manifest, out=str(self.dir / 'probe.json'),
                   probe_out=str(probe_out))
        probe = load_checkpoint(probe_out)
        self.assertEqual(probe.stage_tag, 'probe')
        self.assertEqual(probe.extras['probe.weight'].shape, (32, 8))
        self.assertEqual(probe.params.digest(), load_checkpoint(checkpoint).params.digest())

    def test_eval_prompt_file_must_cover_every_class(self):
        checkpoint = self.train('sar', 'model.ckpt')
        prompts = self.dir / 'prompts.json'
        prompts.write_text(json.dumps({'tank': ['A SAR image of the tank']}), encoding='utf-8')
        with self.assertRaises(CommandError) as ctx:
            quiet_call('eval', 'zeroshot', ckpt=str(checkpoint), manifest=str(self.benchmarks['sar'].manifest_path),
                       prompts=str(prompts), out=str(self.dir / 'zs.json'))
        self.assertEqual(ctx.exception.returncode, 1)

    def test_export_embeddings(self):
        checkpoint = self.train('sar', 'model.ckpt')
        out = self.dir / 'emb.f64'
        code, _ = run_cli(['export-embeddings', '--ckpt', str(checkpoint), '--pairs',
                           str(self.benchmarks['sar'].test_path), '--out', str(out)])
        self.assertEqual(code, 0)
        store = FeatureStore.open(out)
        self.assertEqual(store.matrix.shape, (256, 32))
        self.assertIn('image:synthetic-sar:sar-test-00000', store.rows)
        self.assertIn('text:synthetic-sar:sar-test-00000:0', store.rows)

    def test_exit_codes(self):
        pairs = str(self.benchmarks['sar'].train_path)
        code, err = run_cli(['train', '--pairs', pairs])
        self.assertEqual(code, 1)
        self.assertTrue(err.startswith('usage:'), err)

        code, err = run_cli(['train', '--pairs', pairs, '--out', str(self.dir / 'x.ckpt'), '--set', 'bogus=1'])
        self.assertEqual(code, 1)
        self.assertTrue(err.startswith('config:'), err)

        code, err = run_cli(['eval', 'retrieval', '--ckpt', str(self.dir / 'missing.ckpt'), '--pairs', pairs,
                             '--out', str(self.dir / 'r.json')])
        self.assertEqual(code, 1)
        self.assertTrue(err.startswith('validation:'), err)

        code, err = run_cli(['gradcheck', '--models', '1', '--tolerance', '0'])
        self.assertEqual(code, 2)
        self.assertIn('internal:', err)

        code, _ = run_cli(['gradcheck', '--models', '2'])
        self.assertEqual(code, 0)


class GradcheckCommandTests(SimpleTestCase):
    def check(self, out, **options):
        quiet_call('gradcheck', models=2, out=str(out), **options)
        return json.loads(out.read_text(encoding='utf-8'))

    def test_results_file_is_stamped(self):
        with tempfile.TemporaryDirectory() as tmp:
            tmp = Path(tmp)
            document = self.check(tmp / 'a.json')
            self.assertEqual(document['format_version'], 1)
            self.assertEqual(len(document['fingerprint']), 16)
            self.assertEqual(len(document['models']), 2)
            self.assertLess(document['worst'], document['tolerance'])
            self.assertEqual(self.check(tmp / 'b.json')['fingerprint'], document['fingerprint'])
            self.assertNotEqual(self.check(tmp / 'c.json', seed=1)['fingerprint'], document['fingerprint'])


class ReportCommandTests(SimpleTestCase):
    def test_aggregate_and_mismatch(self):
        with tempfile.TemporaryDirectory() as tmp:
            tmp = Path(tmp)
            first = write_report(EvalReport('retrieval', {'i2t_r1': 0.5}), tmp / 'a.json')[1]
            second = write_report(EvalReport('zeroshot', {'accuracy': 0.8}), tmp / 'b.json')[1]
            quiet_call('report', str(first), str(second), out=str(tmp / 'all.tsv'))
            self.assertEqual(len(read_summary_rows(tmp / 'all.tsv')), 2)

            stale = write_report(EvalReport('zeroshot', {'accuracy': 0.8}, format_version=2), tmp / 'c.json')[1]
            with self.assertRaises(CommandError) as ctx:
                quiet_call('report', str(first), str(stale), out=str(tmp / 'bad.tsv'))
            self.assertEqual(ctx.exception.returncode, 1)
            self.assertIn('format versions', str(ctx.exception))
