import json
from pathlib import Path

from clipkit.checkpoints import Checkpoint, load_checkpoint, save_checkpoint
from clipkit.corpus import read_pairs
from clipkit.evaluation import (
    DEFAULT_KS,
    labeled_features,
    prompts_for,
    retrieval_eval,
    train_linear_probe,
    zero_shot_classify,
)
from clipkit.exceptions import ConfigError, CorpusError, ValidationFailed
from clipkit.ingest import parse_classification_manifest
from clipkit.records import Split
from clipkit.reports import write_report

from ._base import ClipCommand

TASKS = ('retrieval', 'zeroshot', 'probe')


def parse_ks(raw):
    try:
        ks = sorted({int(part) for part in raw.split(',') if part.strip()})
    except ValueError:
        raise ConfigError(f'--k must be a comma-separated list of integers, got {raw!r}') from None
    if not ks or ks[0] < 1:
        raise ConfigError('--k values must be positive')
    return ks


class Command(ClipCommand):
    help = 'Evaluate a checkpoint: retrieval recall, zero-shot accuracy or a linear probe'
    uses_config = True

    def add_command_arguments(self, parser):
        parser.add_argument('task', choices=TASKS)
        parser.add_argument('--ckpt', required=True)
        parser.add_argument('--pairs', help='Test pair corpus (retrieval)')
        parser.add_argument('--split', default=Split.TEST.value, choices=[s.value for s in Split],
                            help='Corpus split to evaluate retrieval on')
        parser.add_argument('--manifest', help='Classification manifest of labeled images (zeroshot, probe)')
        parser.add_argument('--prompts', help='JSON object mapping class name to prompt list (zeroshot)')
        parser.add_argument('--k', default=','.join(str(k) for k in DEFAULT_KS))
        parser.add_argument('--out', default=None, help='Report document to write (default: <ckpt>.<task>.json)')
        parser.add_argument('--summary', default=None, help='Summary row file (default: <out> with .tsv)')
        parser.add_argument('--label', default='', help='Free-text label copied into the summary row')
        parser.add_argument('--probe-out', default=None, help='Where to save the trained probe head')
        parser.add_argument('--seed', type=int, default=None, help='Overrides probe.seed')

    def run(self, task, **options):
        checkpoint = load_checkpoint(options['ckpt'])
        params = {'task': task, 'checkpoint': checkpoint.fingerprint}
        if task == 'retrieval':
            params['ks'] = parse_ks(options['k'])
            params['split'] = options['split']
        run_config = self.run_config(options, seed=options['seed'], params=params)
        fp = run_config.fingerprint

        if task == 'retrieval':
            report = self.retrieval(checkpoint, options, params['ks'], fp)
        elif task == 'zeroshot':
            features, labels = self.labeled(options)
            overrides = self.prompt_overrides(options['prompts'])
            report = zero_shot_classify(features, labels, prompts_for(labels, overrides), checkpoint, fp)
        else:
            features, labels = self.labeled(options)
            head, report = train_linear_probe(features, labels, checkpoint, run_config.probe, fp)
            if options['probe_out']:
                save_checkpoint(self.probe_checkpoint(checkpoint, head, fp), options['probe_out'])

        report.label = options['label']
        report.details['checkpoint'] = str(options['ckpt'])
        out = options['out'] or f'{options["ckpt"]}.{task}.json'
        json_path, summary_path = write_report(report, out, options['summary'])
        metrics = ', '.join(f'{name}={value:.4f}' if isinstance(value, float) else f'{name}={value}'
                            for name, value in sorted(report.metrics.items()))
        self.success(f'{task}: {metrics} (report {json_path}, summary {summary_path})')

    def retrieval(self, checkpoint, options, ks, fp):
        if not options['pairs']:
            raise ConfigError('retrieval needs --pairs')
        corpus = read_pairs(options['pairs']).split(options['split'])
        if not len(corpus):
            raise CorpusError(f'{options["pairs"]}: no {options["split"]}-split pairs')
        return retrieval_eval(corpus, checkpoint, ks, fp)

    def labeled(self, options):
        if not options['manifest']:
            raise ConfigError('this task needs --manifest')
        path = Path(options['manifest'])
        records = parse_classification_manifest(path, strict=True)
        return labeled_features(records, path.parent)

    def prompt_overrides(self, path):
        if not path:
            return None
        try:
            document = json.loads(Path(path).read_text(encoding='utf-8'))
        except (OSError, ValueError) as exc:
            raise ValidationFailed(f'cannot read prompts file {path}: {exc}') from exc
        if not isinstance(document, dict) or not all(isinstance(v, list) for v in document.values()):
            raise ValidationFailed(f'{path}: expected an object of class name to prompt list')
        return document

    def probe_checkpoint(self, checkpoint, head, fp):
        return Checkpoint(
            stage_tag='probe',
            params=checkpoint.params,
            vocab=checkpoint.vocab,
            config=checkpoint.config,
            fingerprint=fp,
            extras={'probe.weight': head.weight, 'probe.bias': head.bias},
            meta={'classes': head.classes, 'encoder_fingerprint': checkpoint.fingerprint},
        )
