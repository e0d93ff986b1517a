"""Evaluation report files.

Each run writes a JSON document and a one-row TSV summary. ``aggregate``
joins summary rows from many runs into one table; field names are listed
in DATA_FORMATS.md.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Sequence

from .corpus import atomic_write_bytes
from .exceptions import ReportMismatch

REPORT_FORMAT_VERSION = 1
LEADING_COLUMNS = ['format_version', 'task', 'fingerprint', 'label']


@dataclass
class EvalReport:
    task: str
    metrics: Dict[str, float]
    per_class: Dict[str, float] = field(default_factory=dict)
    fingerprint: str = ''
    label: str = ''
    details: dict = field(default_factory=dict)
    format_version: int = REPORT_FORMAT_VERSION

    def as_document(self):
        return {
            'format_version': self.format_version,
            'task': self.task,
            'fingerprint': self.fingerprint,
            'label': self.label,
            'metrics': self.metrics,
            'per_class': self.per_class,
            'details': self.details,
        }

    def summary_row(self):
        row = {
            'format_version': self.format_version,
            'task': self.task,
            'fingerprint': self.fingerprint,
            'label': self.label,
        }
        row.update({name: repr(value) if isinstance(value, float) else value
                    for name, value in sorted(self.metrics.items())})
        return row


def _tsv(columns, rows):
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=columns, delimiter='\t', lineterminator='\n', restval='')
    writer.writeheader()
    writer.writerows(rows)
    return buffer.getvalue()


def write_report(report: EvalReport, json_path, summary_path=None):
    json_path = Path(json_path)
    document = json.dumps(report.as_document(), indent=2, sort_keys=True) + '\n'
    atomic_write_bytes(json_path, document.encode('utf-8'))
    summary_path = Path(summary_path) if summary_path else json_path.with_suffix('.tsv')
    row = report.summary_row()
    columns = LEADING_COLUMNS + [c for c in row if c not in LEADING_COLUMNS]
    atomic_write_bytes(summary_path, _tsv(columns, [row]).encode('utf-8'))
    return json_path, summary_path


def read_summary_rows(path) -> List[dict]:
    with Path(path).open(newline='', encoding='utf-8') as handle:
        reader = csv.DictReader(handle, delimiter='\t')
        if not reader.fieldnames or reader.fieldnames[:len(LEADING_COLUMNS)] != LEADING_COLUMNS:
            raise ReportMismatch(f'{path}: not a summary row file')
        return list(reader)


def aggregate(paths: Sequence, out):
    """Merge summary rows; every input must carry the same format version."""
    rows = []
    for path in paths:
        rows.extend(read_summary_rows(path))
    if not rows:
        raise ReportMismatch('no summary rows to aggregate')
    versions = {row['format_version'] for row in rows}
    if versions != {str(REPORT_FORMAT_VERSION)}:
        raise ReportMismatch(f'refusing to aggregate format versions {sorted(versions)}')
    extra = sorted({column for row in rows for column in row} - set(LEADING_COLUMNS))
    atomic_write_bytes(out, _tsv(LEADING_COLUMNS + extra, rows).encode('utf-8'))
    return len(rows)
