import numpy as np

from clipkit.checkpoints import load_checkpoint
from clipkit.corpus import read_pairs
from clipkit.embed import encode_images, encode_texts, tokenize
from clipkit.exceptions import CorpusError
from clipkit.features import FeatureResolver, write_feature_store

from ._base import ClipCommand


class Command(ClipCommand):
    help = 'Write image and caption embeddings of a corpus to a feature store for external plotting'

    def add_command_arguments(self, parser):
        parser.add_argument('--ckpt', required=True)
        parser.add_argument('--pairs', required=True)
        parser.add_argument('--out', required=True, help='Feature store to write (an index file is added)')
        parser.add_argument('--which', choices=('image', 'text', 'both'), default='both')

    def run(self, *args, **options):
        checkpoint = load_checkpoint(options['ckpt'])
        corpus = read_pairs(options['pairs'])
        if not len(corpus):
            raise CorpusError(f'{options["pairs"]}: empty corpus')
        keys, blocks = [], []
        if options['which'] in ('image', 'both'):
            images = corpus.images()
            features = FeatureResolver(corpus.base_dir).matrix([pair.feature_ref for pair in images])
            blocks.append(encode_images(features, checkpoint.params))
            keys += [f'image:{pair.source}:{pair.image_id}' for pair in images]
        if options['which'] in ('text', 'both'):
            tokens = []
            for pair in corpus.pairs:
                ids = tokenize(pair.caption_text, checkpoint.vocab)
                if not ids:
                    raise CorpusError(f'caption for {pair.image_id} has no tokens')
                tokens.append(ids)
            blocks.append(encode_texts(tokens, checkpoint.params))
            keys += [f'text:{pair.source}:{pair.image_id}:{n}' for n, pair in enumerate(corpus.pairs)]
        params = {'checkpoint': checkpoint.fingerprint, 'corpus': corpus.fingerprint, 'which': options['which']}
        fp = self.run_config(options, params=params).fingerprint
        write_feature_store(options['out'], keys, np.vstack(blocks), fingerprint=fp)
        self.success(f'{len(keys)} embeddings of width {checkpoint.params.embed_dim} written to {options["out"]}')
