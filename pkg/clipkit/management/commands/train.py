import csv
from pathlib import Path

from clipkit.checkpoints import load_checkpoint, save_checkpoint
from clipkit.corpus import read_pairs
from clipkit.embed import Vocab
from clipkit.exceptions import CheckpointError, CorpusError
from clipkit.records import Split
from clipkit.trainer import LOSS_COLUMNS, LOSS_LOG_FORMAT_VERSION, build_training_set, train_stage

from ._base import ClipCommand


class LossLog:
    """Tab-separated loss stream, one row appended and flushed per step."""

    def __init__(self, path, fingerprint):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.handle = self.path.open('w', newline='', encoding='utf-8')
        self.handle.write(f'# format_version={LOSS_LOG_FORMAT_VERSION} fingerprint={fingerprint}\n')
        self.writer = csv.writer(self.handle, delimiter='\t', lineterminator='\n')
        self.writer.writerow(LOSS_COLUMNS)

    def __call__(self, report):
        self.writer.writerow(report.as_row())
        self.handle.flush()

    def close(self):
        self.handle.close()


class Command(ClipCommand):
    help = 'Train both towers with symmetric InfoNCE; --init continues from a stage-1 checkpoint'
    uses_config = True

    def add_command_arguments(self, parser):
        parser.add_argument('--pairs', required=True, help='Pair corpus; only train-split pairs are used')
        parser.add_argument('--init', default=None, help='Checkpoint to start from (stage 2)')
        parser.add_argument('--out', required=True, help='Checkpoint file to write')
        parser.add_argument('--loss-log', default=None, help='Loss stream file (default: <out>.loss.tsv)')
        parser.add_argument('--vocab', default=None, help='Vocab file to tokenize with instead of building one')
        parser.add_argument('--seed', type=int, default=None, help='Overrides train.seed')

    def run(self, *args, **options):
        out = Path(options['out'])
        corpus = read_pairs(options['pairs'])
        train_corpus = corpus.split(Split.TRAIN)
        if not len(train_corpus):
            raise CorpusError(f'{options["pairs"]}: no train-split pairs')

        init = load_checkpoint(options['init']) if options['init'] else None
        if init is not None and init.stage_tag == 'probe':
            raise CheckpointError(f'{options["init"]}: a probe checkpoint cannot initialize training')
        vocab = init.vocab if init is not None else None
        if options['vocab']:
            vocab = Vocab.load(options['vocab'])

        run_config = self.run_config(
            options,
            seed=options['seed'],
            params={'corpus': corpus.fingerprint, 'init': init.fingerprint if init is not None else None},
            inputs={'pairs': options['pairs'], 'init': options['init'] or ''},
            outputs={'checkpoint': str(out)},
        )
        data = build_training_set(train_corpus, vocab)
        loss_log = LossLog(options['loss_log'] or out.with_name(out.name + '.loss.tsv'), run_config.fingerprint)
        try:
            checkpoint, reports = train_stage(
                data, run_config.train, init=init, fingerprint=run_config.fingerprint, on_step=loss_log,
            )
        finally:
            loss_log.close()
        checkpoint.meta.update({'pairs': len(data), 'corpus_fingerprint': corpus.fingerprint})
        save_checkpoint(checkpoint, out)
        self.success(
            f'{checkpoint.stage_tag} checkpoint written to {out}: {len(reports)} steps, '
            f'final loss {reports[-1].loss:.6f}'
        )
