from clipkit.synthetic import SyntheticSpec, generate

from ._base import ClipCommand


class Command(ClipCommand):
    help = 'Generate the clustered 8-class benchmark (pairs, feature store, labeled manifest)'

    def add_command_arguments(self, parser):
        defaults = SyntheticSpec()
        parser.add_argument('--out', required=True, help='Output directory')
        parser.add_argument('--domain', default=defaults.domain, choices=('optical', 'sar'))
        parser.add_argument('--train-pairs', type=int, default=defaults.train_pairs)
        parser.add_argument('--test-pairs', type=int, default=defaults.test_pairs)
        parser.add_argument('--classes', type=int, default=defaults.classes)
        parser.add_argument('--dim', type=int, default=defaults.dim)
        parser.add_argument('--noise', type=float, default=defaults.noise)
        parser.add_argument('--seed', type=int, default=defaults.seed)

    def run(self, *args, **options):
        spec = SyntheticSpec(
            domain=options['domain'],
            train_pairs=options['train_pairs'],
            test_pairs=options['test_pairs'],
            classes=options['classes'],
            dim=options['dim'],
            noise=options['noise'],
            seed=options['seed'],
        )
        corpus = generate(spec, options['out'])
        self.success(
            f'{spec.domain} benchmark written to {corpus.directory}: {corpus.train_path.name}, '
            f'{corpus.test_path.name}, {corpus.manifest_path.name}, {corpus.store_path.name}'
        )
