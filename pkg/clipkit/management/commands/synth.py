import json
from dataclasses import replace
from pathlib import Path

from clipkit.captions import export_pairs, load_verifier, synthesize_corpus
from clipkit.corpus import PAIRS_FORMAT_VERSION, atomic_write_bytes
from clipkit.features import rebase_ref
from clipkit.ingest import parse_manifest_dir

from ._base import ClipCommand


def stats_path_for(out):
    out = Path(out)
    return out.with_name(out.name.split('.')[0] + '.stats.json')


class Command(ClipCommand):
    help = 'Synthesize templated captions from annotation manifests and write the pair corpus'

    def add_command_arguments(self, parser):
        parser.add_argument('--manifests', required=True, help='Directory of *.det.json, *.cls.csv, *.cap.csv')
        parser.add_argument('--out', required=True, help='Pair corpus file to write')
        parser.add_argument('--seed', type=int, default=0)
        parser.add_argument('--captions-per-image', type=int, default=5)
        parser.add_argument('--stats', default=None, help='Statistics file (default: <out>.stats.json)')
        mode = parser.add_mutually_exclusive_group()
        mode.add_argument('--strict', dest='strict', action='store_true', default=True,
                          help='Fail on the first invalid record (default)')
        mode.add_argument('--permissive', dest='strict', action='store_false',
                          help='Drop invalid records and report them')

    def run(self, *args, **options):
        manifests = Path(options['manifests'])
        out = Path(options['out'])
        n = options['captions_per_image']
        run_config = self.run_config(
            options,
            seed=options['seed'],
            params={'captions_per_image': n, 'strict': options['strict']},
            inputs={'manifests': str(manifests)},
            outputs={'pairs': str(out)},
        )
        records = parse_manifest_dir(manifests, strict=options['strict'], threads=options['threads'])
        out_dir = out.resolve().parent
        records = [
            replace(r, meta=replace(r.meta, feature_ref=rebase_ref(r.meta.feature_ref, manifests, out_dir)))
            for r in records
        ]
        captions = synthesize_corpus(records, options['seed'], n=n, threads=options['threads'])
        stats = export_pairs(records, captions, out, fingerprint=run_config.fingerprint, verifier=load_verifier())

        document = dict(stats.as_dict(), fingerprint=run_config.fingerprint, format_version=PAIRS_FORMAT_VERSION)
        stats_path = Path(options['stats']) if options['stats'] else stats_path_for(out)
        atomic_write_bytes(stats_path, (json.dumps(document, indent=2, sort_keys=True) + '\n').encode('utf-8'))
        self.success(
            f'{stats.total_images} images, {stats.total_captions} pairs written to {out} '
            f'(rejected {stats.rejected} generated, {stats.rejected_native} native)'
        )
