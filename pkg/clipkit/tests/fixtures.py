"""Shared helpers for tests that need a generated benchmark on disk."""
import tempfile
from pathlib import Path

from clipkit.corpus import read_pairs
from clipkit.records import Split
from clipkit.synthetic import SyntheticSpec, generate
from clipkit.trainer import build_training_set


class BenchmarkMixin:
    """Generates one synthetic corpus per domain for the whole test class."""

    domains = ('sar',)
    spec_changes = {}

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls._benchmark_tmp = tempfile.TemporaryDirectory()
        root = Path(cls._benchmark_tmp.name)
        cls.benchmarks = {
            domain: generate(SyntheticSpec(domain=domain, **cls.spec_changes), root / domain)
            for domain in cls.domains
        }

    @classmethod
    def tearDownClass(cls):
        cls._benchmark_tmp.cleanup()
        super().tearDownClass()

    def train_split(self, domain='sar'):
        return read_pairs(self.benchmarks[domain].train_path).split(Split.TRAIN)

    def held_out_corpus(self, domain='sar'):
        return read_pairs(self.benchmarks[domain].test_path)

    def training_set(self, domain='sar', vocab=None):
        return build_training_set(self.train_split(domain), vocab)
