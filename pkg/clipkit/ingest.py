"""Manifest parsing and validation.

Three manifest kinds are understood, all documented in DATA_FORMATS.md:

* ``*.det.json``: COCO-style detection subset with ``images`` and
  ``annotations`` (bbox as ``[x, y, w, h]``).
* ``*.cls.csv``: one row per image with a class label.
* ``*.cap.csv``: one row per native caption, repeated rows per image.

Parsers return records sorted by ``image_id``. In strict mode (the default)
the first invariant breach raises; in permissive mode bad records are dropped
and reported by ``validate_records``.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from collections import Counter, defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

from .exceptions import ManifestParseError, RecordValidationError
from .records import (
    AnnotationRecord,
    BoundingBox,
    Classification,
    Detection,
    ImageMeta,
    NativeCaptions,
    Split,
)

logger = logging.getLogger(__name__)

DETECTION_SUFFIX = '.det.json'
CLASSIFICATION_SUFFIX = '.cls.csv'
CAPTION_SUFFIX = '.cap.csv'

CLASSIFICATION_COLUMNS = ['image_id', 'class_label', 'split', 'width', 'height', 'feature_ref', 'source']
CAPTION_COLUMNS = ['image_id', 'caption', 'split', 'width', 'height', 'feature_ref', 'source']


@dataclass
class ValidationReport:
    accepted: List[AnnotationRecord]
    errors: List[Tuple[str, str]] = field(default_factory=list)
    images_by_source: Dict[str, int] = field(default_factory=dict)
    captions_by_source: Dict[str, int] = field(default_factory=dict)
    images_by_split: Dict[str, int] = field(default_factory=dict)

    @property
    def ok(self):
        return not self.errors

    def as_dict(self):
        return {
            'accepted': len(self.accepted),
            'errors': [{'image_id': image_id, 'message': message} for image_id, message in self.errors],
            'images_by_source': dict(sorted(self.images_by_source.items())),
            'captions_by_source': dict(sorted(self.captions_by_source.items())),
            'images_by_split': dict(sorted(self.images_by_split.items())),
        }


def validate_records(records: Sequence[AnnotationRecord], strict=True) -> ValidationReport:
    """Check every record invariant and tally per-source and per-split counts.

    Strict mode raises ``RecordValidationError`` on the first breach. Permissive
    mode keeps going, drops the offending records and lists one error each.
    """
    report = ValidationReport(accepted=[])
    seen = set()
    images_by_source = Counter()
    captions_by_source = Counter()
    images_by_split = Counter()
    for record in records:
        issues = record.problems()
        key = (record.meta.source, record.image_id)
        if key in seen:
            issues.append(f'duplicate image_id {record.image_id!r} in source {record.meta.source!r}')
        if issues:
            message = '; '.join(issues)
            if strict:
                raise RecordValidationError(record.image_id, message)
            logger.warning('rejecting %s: %s', record.image_id, message)
            report.errors.append((record.image_id, message))
            continue
        seen.add(key)
        report.accepted.append(record)
        images_by_source[record.meta.source] += 1
        images_by_split[record.meta.split.value] += 1
        if isinstance(record.kind, NativeCaptions):
            captions_by_source[record.meta.source] += len(record.kind.texts)
    report.images_by_source = dict(images_by_source)
    report.captions_by_source = dict(captions_by_source)
    report.images_by_split = dict(images_by_split)
    return report


def parse_detection_manifest(path, strict=True) -> List[AnnotationRecord]:
    path = Path(path)
    try:
        document = json.loads(path.read_text(encoding='utf-8'))
    except json.JSONDecodeError as exc:
        raise ManifestParseError(path, exc.msg, line=exc.lineno) from exc
    except OSError as exc:
        raise ManifestParseError(path, str(exc)) from exc
    if not isinstance(document, dict):
        raise ManifestParseError(path, 'top level must be an object')

    source = str(document.get('source') or _source_from_path(path, DETECTION_SUFFIX))
    images = _require_list(path, document, 'images')
    annotations = _require_list(path, document, 'annotations')
    categories = {}
    for index, category in enumerate(document.get('categories') or []):
        where = f'categories[{index}]'
        if not isinstance(category, dict) or 'id' not in category or 'name' not in category:
            raise ManifestParseError(path, 'category needs id and name', field=where)
        categories[category['id']] = str(category['name'])

    entries = defaultdict(list)
    known_ids = set()
    metas = []
    for index, image in enumerate(images):
        where = f'images[{index}]'
        if not isinstance(image, dict):
            raise ManifestParseError(path, 'image entry must be an object', field=where)
        image_id = _text(path, image, 'id', where)
        metas.append(ImageMeta(
            image_id=image_id,
            width=_integer(path, image, 'width', where),
            height=_integer(path, image, 'height', where),
            source=source,
            split=_split(path, image.get('split', 'train'), f'{where}.split'),
            feature_ref=str(image.get('feature_ref') or f'#{image_id}'),
        ))
        known_ids.add(image_id)

    for index, annotation in enumerate(annotations):
        where = f'annotations[{index}]'
        if not isinstance(annotation, dict):
            raise ManifestParseError(path, 'annotation entry must be an object', field=where)
        image_id = _text(path, annotation, 'image_id', where)
        if image_id not in known_ids:
            raise ManifestParseError(path, f'unknown image {image_id!r}', field=f'{where}.image_id')
        if 'category' in annotation:
            label = str(annotation['category'])
        elif annotation.get('category_id') in categories:
            label = categories[annotation['category_id']]
        else:
            raise ManifestParseError(path, 'needs category or a known category_id', field=where)
        entries[image_id].append((label, _bbox(path, annotation.get('bbox'), f'{where}.bbox')))

    records = [
        AnnotationRecord(meta=meta, kind=Detection(entries=tuple(entries.get(meta.image_id, ()))))
        for meta in metas
    ]
    return _finish(records, strict)


def parse_classification_manifest(path, strict=True) -> List[AnnotationRecord]:
    path = Path(path)
    records = []
    for line, row in _csv_rows(path, ('image_id', 'class_label')):
        meta = _row_meta(path, row, line, CLASSIFICATION_SUFFIX)
        records.append(AnnotationRecord(meta=meta, kind=Classification(class_label=row['class_label'] or '')))
    return _finish(records, strict)


def parse_caption_manifest(path, strict=True) -> List[AnnotationRecord]:
    path = Path(path)
    metas = {}
    texts = defaultdict(list)
    for line, row in _csv_rows(path, ('image_id', 'caption')):
        meta = _row_meta(path, row, line, CAPTION_SUFFIX)
        known = metas.setdefault(meta.image_id, meta)
        if known != meta:
            raise ManifestParseError(path, f'metadata of {meta.image_id!r} differs from its first row', line=line)
        texts[meta.image_id].append(row['caption'] or '')
    records = [
        AnnotationRecord(meta=meta, kind=NativeCaptions(texts=tuple(texts[image_id])))
        for image_id, meta in metas.items()
    ]
    return _finish(records, strict)


PARSERS = {
    DETECTION_SUFFIX: parse_detection_manifest,
    CLASSIFICATION_SUFFIX: parse_classification_manifest,
    CAPTION_SUFFIX: parse_caption_manifest,
}


def manifest_files(directory) -> List[Path]:
    directory = Path(directory)
    found = [p for p in directory.iterdir() if p.is_file() and _suffix_of(p)]
    return sorted(found)


def parse_manifest_dir(directory, strict=True, threads=1) -> List[AnnotationRecord]:
    """Parse every known manifest in ``directory``; output order ignores ``threads``."""
    files = manifest_files(directory)
    if not files:
        raise ManifestParseError(directory, 'no *.det.json, *.cls.csv or *.cap.csv manifests found')

    def parse(path):
        return PARSERS[_suffix_of(path)](path, strict=strict)

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        parsed = list(pool.map(parse, files))
    records = [record for chunk in parsed for record in chunk]
    records.sort(key=lambda r: (r.image_id, r.meta.source))
    logger.info('parsed %d records from %d manifests', len(records), len(files))
    return records


def write_detection_manifest(records, path):
    records = sorted(records, key=lambda r: r.image_id)
    sources = {r.meta.source for r in records}
    if len(sources) > 1:
        raise ValueError(f'one detection manifest per source, got {sorted(sources)}')
    document = {
        'source': sources.pop() if sources else _source_from_path(Path(path), DETECTION_SUFFIX),
        'images': [
            {
                'id': r.image_id,
                'width': r.meta.width,
                'height': r.meta.height,
                'split': r.meta.split.value,
                'feature_ref': r.meta.feature_ref,
            }
            for r in records
        ],
        'annotations': [
            {'image_id': r.image_id, 'category': label, 'bbox': box.as_xywh()}
            for r in records
            for label, box in r.kind.entries
        ],
    }
    Path(path).write_text(json.dumps(document, indent=2, sort_keys=True) + '\n', encoding='utf-8')


def write_classification_manifest(records, path):
    rows = [
        dict(_meta_row(r.meta), class_label=r.kind.class_label)
        for r in sorted(records, key=lambda r: r.image_id)
    ]
    _write_csv(path, CLASSIFICATION_COLUMNS, rows)


def write_caption_manifest(records, path):
    rows = [
        dict(_meta_row(r.meta), caption=text)
        for r in sorted(records, key=lambda r: r.image_id)
        for text in r.kind.texts
    ]
    _write_csv(path, CAPTION_COLUMNS, rows)


def dump_records(records, directory) -> List[Path]:
    """Write records in canonical manifest form, one file per (source, kind)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    groups = defaultdict(list)
    for record in records:
        groups[(record.meta.source, record.kind_name)].append(record)
    writers = {
        'detection': (DETECTION_SUFFIX, write_detection_manifest),
        'classification': (CLASSIFICATION_SUFFIX, write_classification_manifest),
        'caption': (CAPTION_SUFFIX, write_caption_manifest),
    }
    written = []
    for (source, kind), group in sorted(groups.items()):
        suffix, writer = writers[kind]
        target = directory / f'{source}{suffix}'
        writer(group, target)
        written.append(target)
    return written


# helpers

def _finish(records, strict):
    report = validate_records(records, strict=strict)
    return sorted(report.accepted, key=lambda r: r.image_id)


def _suffix_of(path):
    name = Path(path).name
    for suffix in PARSERS:
        if name.endswith(suffix):
            return suffix
    return None


def _source_from_path(path, suffix):
    name = path.name
    return name[:-len(suffix)] if name.endswith(suffix) else path.stem


def _require_list(path, document, key):
    value = document.get(key)
    if not isinstance(value, list):
        raise ManifestParseError(path, f'missing or non-list {key!r}', field=key)
    return value


def _text(path, entry, key, where):
    value = entry.get(key)
    if value is None or isinstance(value, (dict, list)) or str(value) == '':
        raise ManifestParseError(path, f'missing {key!r}', field=f'{where}.{key}')
    return str(value)


def _integer(path, entry, key, where):
    value = entry.get(key)
    if (isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value)
            or value != int(value)):
        raise ManifestParseError(path, f'expected an integer, got {value!r}', field=f'{where}.{key}')
    return int(value)


def _split(path, value, where, line=None):
    try:
        return Split(str(value).strip() or 'train')
    except ValueError:
        raise ManifestParseError(path, f'split must be train, val or test, got {value!r}', line=line, field=where)


def _bbox(path, value, where):
    if not isinstance(value, list) or len(value) != 4:
        raise ManifestParseError(path, 'bbox must be [x, y, w, h]', field=where)
    if any(isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v) for v in value):
        raise ManifestParseError(path, f'bbox values must be finite numbers, got {value!r}', field=where)
    x, y, w, h = value
    # non-integral coordinates snap outward onto the pixel grid
    return BoundingBox(math.floor(x), math.floor(y), math.ceil(x + w), math.ceil(y + h))


def _csv_rows(path, required):
    try:
        handle = path.open(newline='', encoding='utf-8')
    except OSError as exc:
        raise ManifestParseError(path, str(exc)) from exc
    with handle:
        reader = csv.DictReader(handle)
        header = reader.fieldnames or []
        for column in required:
            if column not in header:
                raise ManifestParseError(path, f'missing column {column!r}', line=1, field=column)
        try:
            for row in reader:
                yield reader.line_num, row
        except csv.Error as exc:
            raise ManifestParseError(path, str(exc), line=reader.line_num) from exc


def _row_meta(path, row, line, suffix):
    image_id = (row.get('image_id') or '').strip()
    if not image_id:
        raise ManifestParseError(path, 'empty image_id', line=line, field='image_id')
    sizes = {}
    for column in ('width', 'height'):
        raw = (row.get(column) or '').strip()
        try:
            sizes[column] = int(raw) if raw else 1
        except ValueError:
            raise ManifestParseError(path, f'expected an integer, got {raw!r}', line=line, field=column)
    return ImageMeta(
        image_id=image_id,
        width=sizes['width'],
        height=sizes['height'],
        source=(row.get('source') or '').strip() or _source_from_path(path, suffix),
        split=_split(path, row.get('split') or 'train', 'split', line=line),
        feature_ref=(row.get('feature_ref') or '').strip() or f'#{image_id}',
    )


def _meta_row(meta):
    return {
        'image_id': meta.image_id,
        'split': meta.split.value,
        'width': meta.width,
        'height': meta.height,
        'feature_ref': meta.feature_ref,
        'source': meta.source,
    }


def _write_csv(path, columns, rows):
    with Path(path).open('w', newline='', encoding='utf-8') as handle:
        writer = csv.DictWriter(handle, fieldnames=columns, lineterminator='\n')
        writer.writeheader()
        writer.writerows(rows)
