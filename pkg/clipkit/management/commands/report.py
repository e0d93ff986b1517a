from clipkit.reports import aggregate

from ._base import ClipCommand


class Command(ClipCommand):
    help = 'Aggregate evaluation summary rows into one table'

    def add_command_arguments(self, parser):
        parser.add_argument('summaries', nargs='+', help='Summary row files written by eval')
        parser.add_argument('--out', required=True)

    def run(self, *args, **options):
        rows = aggregate(options['summaries'], options['out'])
        self.success(f'{rows} rows from {len(options["summaries"])} files written to {options["out"]}')
