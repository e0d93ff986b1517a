"""Annotation records produced by manifest ingestion."""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Tuple, Union


class Split(str, Enum):
    TRAIN = 'train'
    VAL = 'val'
    TEST = 'test'


@dataclass(frozen=True, order=True)
class BoundingBox:
    """Half-open pixel rectangle [x_min, x_max) x [y_min, y_max), top-left origin."""
    x_min: int
    y_min: int
    x_max: int
    y_max: int

    @property
    def width(self):
        return self.x_max - self.x_min

    @property
    def height(self):
        return self.y_max - self.y_min

    @property
    def area(self):
        return self.width * self.height

    @property
    def center(self):
        return ((self.x_min + self.x_max) / 2, (self.y_min + self.y_max) / 2)

    def as_xywh(self):
        return [self.x_min, self.y_min, self.width, self.height]

    def problems(self, width, height):
        """Return invariant breaches against an image of ``width`` x ``height``."""
        issues = []
        if self.x_min >= self.x_max or self.y_min >= self.y_max:
            issues.append(f'zero-area box {self.as_xywh()}')
        if self.x_min < 0 or self.y_min < 0 or self.x_max > width or self.y_max > height:
            issues.append(f'box {self.as_xywh()} outside image {width}x{height}')
        return issues


@dataclass(frozen=True)
class ImageMeta:
    image_id: str
    width: int
    height: int
    source: str
    split: Split
    feature_ref: str


@dataclass(frozen=True)
class Classification:
    class_label: str


@dataclass(frozen=True)
class Detection:
    entries: Tuple[Tuple[str, BoundingBox], ...]


@dataclass(frozen=True)
class NativeCaptions:
    texts: Tuple[str, ...]


RecordKind = Union[Classification, Detection, NativeCaptions]


@dataclass(frozen=True)
class AnnotationRecord:
    meta: ImageMeta
    kind: RecordKind = field(compare=True)

    @property
    def image_id(self):
        return self.meta.image_id

    @property
    def kind_name(self):
        if isinstance(self.kind, Classification):
            return 'classification'
        if isinstance(self.kind, Detection):
            return 'detection'
        return 'caption'

    def problems(self):
        """Every invariant breach of this record, as human-readable strings."""
        meta = self.meta
        issues = []
        if not meta.image_id:
            issues.append('empty image_id')
        if meta.width < 1 or meta.height < 1:
            issues.append(f'non-positive image size {meta.width}x{meta.height}')
        kind = self.kind
        if isinstance(kind, Classification):
            if not kind.class_label.strip():
                issues.append('empty class label')
        elif isinstance(kind, Detection):
            if not kind.entries:
                issues.append('detection record without boxes')
            for label, box in kind.entries:
                if not label.strip():
                    issues.append('empty class label')
                issues.extend(box.problems(meta.width, meta.height))
        else:
            if not kind.texts:
                issues.append('image has zero captions')
            for text in kind.texts:
                if not text.strip():
                    issues.append('whitespace-only caption')
        return issues
