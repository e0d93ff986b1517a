import json
from pathlib import Path

import numpy as np

from clipkit.corpus import atomic_write_bytes
from clipkit.exceptions import NumericalError
from clipkit.trainer import finite_diff_gradcheck, frozen_names, random_instance

from ._base import ClipCommand

GRADCHECK_FORMAT_VERSION = 1
CHECK_OPTIONS = ('models', 'seed', 'batch', 'embed_dim', 'hidden', 'step', 'tau', 'tolerance', 'fixed_tau')


class Command(ClipCommand):
    help = 'Compare analytic InfoNCE gradients with central finite differences on random small models'

    def add_command_arguments(self, parser):
        parser.add_argument('--models', type=int, default=20)
        parser.add_argument('--seed', type=int, default=0)
        parser.add_argument('--batch', type=int, default=4)
        parser.add_argument('--embed-dim', type=int, default=8)
        parser.add_argument('--hidden', type=int, default=8)
        parser.add_argument('--step', type=float, default=1e-5, help='Finite-difference step h')
        parser.add_argument('--tau', type=float, default=0.5)
        parser.add_argument(
            '--tolerance', type=float, default=1e-5,
            help=('Largest allowed error |a - n| / max(|a|, |n|, 1e-4); when both values are under 1e-4 '
                  'this is the absolute error divided by 1e-4'),
        )
        parser.add_argument('--fixed-tau', action='store_true', help='Leave log_tau out of the check')
        parser.add_argument('--out', default=None, help='Optional JSON file with per-model results')

    def run(self, *args, **options):
        seeds = np.random.SeedSequence(options['seed']).generate_state(options['models'])
        results = []
        for index, seed in enumerate(seeds):
            params, features, tokens = random_instance(
                int(seed), batch=options['batch'], embed_dim=options['embed_dim'], hidden=options['hidden'],
            )
            frozen = frozen_names(params, learnable_tau=not options['fixed_tau'])
            report = finite_diff_gradcheck(params, features, tokens, tau=options['tau'], h=options['step'],
                                           frozen=frozen)
            results.append({'model': index, 'max_rel_error': report.max_rel_error, 'per_tensor': report.per_tensor})
            self.stdout.write(f'model {index}: max relative error {report.max_rel_error:.3e}')

        worst = max(result['max_rel_error'] for result in results)
        if options['out']:
            # gradcheck takes no run config file
            run_config = self.run_config(dict(options, config=''), seed=options['seed'],
                                         params={name: options[name] for name in CHECK_OPTIONS})
            document = {
                'format_version': GRADCHECK_FORMAT_VERSION,
                'fingerprint': run_config.fingerprint,
                'tolerance': options['tolerance'],
                'worst': worst,
                'models': results,
            }
            atomic_write_bytes(Path(options['out']), (json.dumps(document, indent=2) + '\n').encode('utf-8'))
        if worst >= options['tolerance']:
            raise NumericalError(f'gradient check failed: max relative error {worst:.3e} >= {options["tolerance"]}')
        self.success(f'{len(results)} models pass, max relative error {worst:.3e}')
