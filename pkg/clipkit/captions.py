"""Templated caption synthesis from annotation records.

Four template families are shipped (see TEMPLATES_GUIDE.md for the full
list): general and complex descriptions filled with a class phrase,
absolute-region captions that place targets in one of five image regions,
and relative-region captions that relate two targets.
"""
from __future__ import annotations

import hashlib
import logging
import re
from collections import Counter, defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Mapping, Sequence

import numpy as np
from django.conf import settings
from django.utils.module_loading import import_string

from .corpus import PairRecord, write_pairs
from .exceptions import CoincidentTargets, SynthesisError
from .records import AnnotationRecord, Classification, Detection, Split
from .regions import RegionLabel, assign_region, relative_direction

logger = logging.getLogger(__name__)

SLOT_NAMES = frozenset({
    'class', 'classes', 'location',
    'class1', 'location1', 'relative_direction', 'class2', 'location2',
})
SLOT_PATTERN = re.compile(r'\[([a-z_0-9]+)\]')

COUNT_WORDS = ('zero', 'one', 'two', 'three', 'four', 'five', 'six', 'seven', 'eight', 'nine')


class TemplateKind(Enum):
    GENERAL = 'general'
    COMPLEX = 'complex'
    ABSOLUTE_REGION = 'absolute_region'
    RELATIVE_REGION = 'relative_region'
    NATIVE = 'native'


@dataclass(frozen=True)
class Template:
    kind: TemplateKind
    text: str
    template_id: str

    def __post_init__(self):
        unknown = set(self.slots) - SLOT_NAMES
        if unknown:
            raise ValueError(f'template {self.template_id} uses unknown slots {sorted(unknown)}')

    @property
    def slots(self):
        return SLOT_PATTERN.findall(self.text)


@dataclass(frozen=True)
class Caption:
    text: str
    template_id: str
    kind: TemplateKind
    image_id: str = ''


TEMPLATES = (
    Template(TemplateKind.GENERAL, 'A SAR image of the [class]', 'g-01'),
    Template(TemplateKind.GENERAL, 'A SAR image containing [class].', 'g-02'),
    Template(TemplateKind.GENERAL, 'A radar image showing the [class].', 'g-03'),
    Template(TemplateKind.GENERAL, 'This SAR image depicts the [class].', 'g-04'),
    Template(TemplateKind.GENERAL, 'An overhead SAR view of the [class].', 'g-05'),
    Template(TemplateKind.COMPLEX, 'A SAR image reveals the distinct texture and structure of the [class].', 'c-01'),
    Template(TemplateKind.COMPLEX, 'Strong radar backscatter outlines the shape of the [class] in this SAR image.', 'c-02'),
    Template(TemplateKind.COMPLEX, 'The speckled SAR scene highlights the scattering centers of the [class].', 'c-03'),
    Template(
        TemplateKind.COMPLEX,
        'In this SAR image, the geometry of the [class] stands out against the background clutter.',
        'c-04',
    ),
    Template(TemplateKind.COMPLEX, 'A high resolution SAR image captures the bright returns of the [class].', 'c-05'),
    Template(TemplateKind.ABSOLUTE_REGION, 'A SAR image of [classes] located in the [location] of the image.', 'a-01'),
    Template(TemplateKind.ABSOLUTE_REGION, 'In the [location] of this SAR image there are [classes].', 'a-02'),
    Template(TemplateKind.ABSOLUTE_REGION, 'The [location] region of the SAR image contains [classes].', 'a-03'),
    Template(
        TemplateKind.RELATIVE_REGION,
        'In this SAR image, the [class1] in the [location1] are positioned [relative_direction] '
        'the [class2] in the [location2].',
        'r-01',
    ),
    Template(
        TemplateKind.RELATIVE_REGION,
        'The [class1] in the [location1] of this SAR image lies [relative_direction] the [class2] '
        'in the [location2].',
        'r-02',
    ),
    Template(
        TemplateKind.RELATIVE_REGION,
        'Seen in this SAR image, the [class1] in the [location1] sits [relative_direction] the [class2] '
        'in the [location2].',
        'r-03',
    ),
)
TEMPLATES_BY_ID = {t.template_id: t for t in TEMPLATES}


def template_pool(*kinds) -> List[Template]:
    return [t for t in TEMPLATES if t.kind in kinds]


DESCRIPTION_POOL = template_pool(TemplateKind.GENERAL, TemplateKind.COMPLEX)
ABSOLUTE_POOL = template_pool(TemplateKind.ABSOLUTE_REGION)
RELATIVE_POOL = template_pool(TemplateKind.RELATIVE_REGION)

# caption kinds for detection images, cycled by caption position
DETECTION_MIX = (
    TemplateKind.GENERAL,
    TemplateKind.GENERAL,
    TemplateKind.ABSOLUTE_REGION,
    TemplateKind.ABSOLUTE_REGION,
    TemplateKind.RELATIVE_REGION,
)


def count_phrase(count, label):
    word = COUNT_WORDS[count] if count < 10 else str(count)
    if count != 1 and not label.endswith('s'):
        label = f'{label}s'
    return f'{word} {label}'


def join_phrases(parts):
    if len(parts) <= 1:
        return ''.join(parts)
    return f'{", ".join(parts[:-1])} and {parts[-1]}'


def summarize_objects(entries) -> str:
    """Render per-class counts, e.g. ``two ships and one bridge``."""
    counts = Counter(label for label, _ in entries)
    ordered = sorted(counts.items(), key=lambda item: (-item[1], item[0]))
    return join_phrases([count_phrase(count, label) for label, count in ordered])


def fill_template(template: Template, slots: Mapping[str, str], image_id='') -> Caption:
    for name in template.slots:
        if name not in slots:
            raise ValueError(f'missing slot [{name}] for template {template.template_id}')
    text = SLOT_PATTERN.sub(lambda match: slots[match.group(1)], template.text)
    return Caption(text=text, template_id=template.template_id, kind=template.kind, image_id=image_id)


@dataclass(frozen=True)
class Verdict:
    accepted: bool
    reason: str = ''


class RuleBasedVerifier:
    """Stand-in for a fluency check: structural rules only."""

    PAIRS = {')': '(', ']': '[', '}': '{'}

    def verify(self, caption: Caption) -> Verdict:
        text = caption.text
        if not text.strip():
            return Verdict(False, 'empty')
        if SLOT_PATTERN.search(text):
            return Verdict(False, 'unfilled slot')
        if not text[0].isupper():
            return Verdict(False, 'must start with an uppercase letter')
        if not self._balanced(text):
            return Verdict(False, 'unbalanced punctuation')
        if not (text[-1].isalnum() or text[-1] == '.'):
            return Verdict(False, 'must end with a letter, digit or period')
        return Verdict(True)

    def _balanced(self, text):
        stack = []
        for char in text:
            if char in '([{':
                stack.append(char)
            elif char in self.PAIRS:
                if not stack or stack.pop() != self.PAIRS[char]:
                    return False
        return not stack and text.count('"') % 2 == 0


def verify_caption(caption: Caption) -> Verdict:
    return RuleBasedVerifier().verify(caption)


def load_verifier():
    """Instantiate the verifier class named by ``SARCLIP['CAPTION_VERIFIER']``."""
    return import_string(settings.SARCLIP['CAPTION_VERIFIER'])()


def derive_rng(seed: int, image_id: str) -> np.random.Generator:
    digest = hashlib.sha256(f'{seed}:{image_id}'.encode('utf-8')).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], 'little'))


def _draw_templates(pool, count, rng):
    order = []
    while len(order) < count:
        order.extend(int(i) for i in rng.permutation(len(pool)))
    return [pool[i] for i in order[:count]]


def synthesize_captions(record: AnnotationRecord, rng: np.random.Generator, n=5) -> List[Caption]:
    if n < 1:
        raise ValueError('captions per image must be at least 1')
    image_id = record.image_id
    kind = record.kind
    if isinstance(kind, Classification):
        return [
            fill_template(template, {'class': kind.class_label}, image_id)
            for template in _draw_templates(DESCRIPTION_POOL, n, rng)
        ]
    if isinstance(kind, Detection):
        return _detection_captions(record, kind.entries, rng, n)
    return [Caption(text, 'native', TemplateKind.NATIVE, image_id) for text in kind.texts]


def _detection_captions(record, entries, rng, n):
    meta = record.meta
    regions = [assign_region(box, meta.width, meta.height) for _, box in entries]

    groups = defaultdict(list)
    for entry, region in zip(entries, regions):
        groups[region].append(entry)
    grouped = [(region, groups[region]) for region in RegionLabel if region in groups]

    pairs = []
    for i in range(len(entries)):
        for j in range(i + 1, len(entries)):
            try:
                pairs.append((i, j, relative_direction(entries[i][1], entries[j][1])))
            except CoincidentTargets:
                continue

    plan = [DETECTION_MIX[position % len(DETECTION_MIX)] for position in range(n)]
    if not pairs:
        plan = [TemplateKind.ABSOLUTE_REGION if k is TemplateKind.RELATIVE_REGION else k for k in plan]

    descriptions = iter(_draw_templates(DESCRIPTION_POOL, plan.count(TemplateKind.GENERAL), rng))
    absolutes = iter(_draw_templates(ABSOLUTE_POOL, plan.count(TemplateKind.ABSOLUTE_REGION), rng))
    relatives = iter(_draw_templates(RELATIVE_POOL, plan.count(TemplateKind.RELATIVE_REGION), rng))
    group_offset = int(rng.integers(len(grouped)))
    summary = summarize_objects(entries)

    captions = []
    absolute_index = 0
    for planned in plan:
        if planned is TemplateKind.GENERAL:
            captions.append(fill_template(next(descriptions), {'class': summary}, meta.image_id))
        elif planned is TemplateKind.ABSOLUTE_REGION:
            region, members = grouped[(group_offset + absolute_index) % len(grouped)]
            absolute_index += 1
            slots = {'classes': summarize_objects(members), 'location': region.phrase}
            captions.append(fill_template(next(absolutes), slots, meta.image_id))
        else:
            i, j, direction = pairs[int(rng.integers(len(pairs)))]
            slots = {
                'class1': entries[i][0],
                'location1': regions[i].phrase,
                'relative_direction': direction.phrase,
                'class2': entries[j][0],
                'location2': regions[j].phrase,
            }
            captions.append(fill_template(next(relatives), slots, meta.image_id))
    return captions


def synthesize_corpus(records: Sequence[AnnotationRecord], seed: int, n=5, threads=1) -> List[List[Caption]]:
    """Captions for every record; each record draws from its own (seed, image_id) stream."""
    def run(record):
        return synthesize_captions(record, derive_rng(seed, record.image_id), n)

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        return list(pool.map(run, records))


@dataclass
class CorpusStats:
    images_by_source: Dict[str, int] = field(default_factory=dict)
    captions_by_source: Dict[str, int] = field(default_factory=dict)
    pairs_by_split: Dict[str, int] = field(default_factory=dict)
    rejected: int = 0
    rejected_native: int = 0
    generated: int = 0

    @property
    def total_images(self):
        return sum(self.images_by_source.values())

    @property
    def total_captions(self):
        return sum(self.captions_by_source.values())

    @property
    def rejection_rate(self):
        return self.rejected / self.generated if self.generated else 0.0

    def add(self, source, images, captions):
        self.images_by_source[source] = self.images_by_source.get(source, 0) + images
        self.captions_by_source[source] = self.captions_by_source.get(source, 0) + captions

    def as_dict(self):
        return {
            'images_by_source': dict(sorted(self.images_by_source.items())),
            'captions_by_source': dict(sorted(self.captions_by_source.items())),
            'pairs_by_split': dict(sorted(self.pairs_by_split.items())),
            'total_images': self.total_images,
            'total_captions': self.total_captions,
            'rejected': self.rejected,
            'rejected_native': self.rejected_native,
        }


def export_pairs(records, captions, out, fingerprint='', verifier=None, max_rejection_rate=None) -> CorpusStats:
    """Verify captions and write the pair corpus ordered by (image_id, source).

    ``captions`` is aligned with ``records``. Test-split images keep only their
    first accepted caption.
    """
    if len(records) != len(captions):
        raise ValueError('records and captions must be aligned')
    verifier = verifier or load_verifier()
    if max_rejection_rate is None:
        max_rejection_rate = settings.SARCLIP['MAX_REJECTION_RATE']

    stats = CorpusStats()
    pairs = []
    split_counts = Counter()
    ordered = sorted(zip(records, captions), key=lambda item: (item[0].image_id, item[0].meta.source))
    for record, image_captions in ordered:
        accepted = []
        for caption in image_captions:
            verdict = verifier.verify(caption)
            if caption.kind is not TemplateKind.NATIVE:
                stats.generated += 1
            if verdict.accepted:
                accepted.append(caption)
                continue
            if caption.kind is TemplateKind.NATIVE:
                stats.rejected_native += 1
            else:
                stats.rejected += 1
            logger.warning('rejected caption for %s (%s): %r', record.image_id, verdict.reason, caption.text)
        if record.meta.split is Split.TEST:
            accepted = accepted[:1]
        meta = record.meta
        stats.add(meta.source, 1, len(accepted))
        split_counts[meta.split.value] += len(accepted)
        pairs.extend(
            PairRecord(
                image_id=meta.image_id,
                source=meta.source,
                split=meta.split,
                feature_ref=meta.feature_ref,
                caption_text=caption.text,
                template_id=caption.template_id,
                template_kind=caption.kind.value,
            )
            for caption in accepted
        )
    stats.pairs_by_split = dict(split_counts)

    if stats.rejection_rate > max_rejection_rate:
        raise SynthesisError(
            f'{stats.rejected} of {stats.generated} generated captions failed verification '
            f'({stats.rejection_rate:.2%} > {max_rejection_rate:.2%}); the template pool is broken'
        )
    write_pairs(pairs, out, fingerprint=fingerprint)
    logger.info('wrote %d pairs for %d images to %s', len(pairs), stats.total_images, out)
    return stats
