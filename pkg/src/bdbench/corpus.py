"""Dataset model, TSV/JSONL ingestion, and a seeded synthetic corpus generator.

A Dataset is immutable once built: splits are tuples of TextSample records
and every mutation in the pipeline (poisoning, filtering) produces a new
object. The synthetic generator emits lowercase space-separated tokens only,
so tokenizer behavior on fixtures is unambiguous.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ParseError, ValidationError

SPLITS = ("train", "dev", "test")

DEFAULT_CLASS_KEYWORDS = (
    ("awful", "boring", "dreadful", "tedious", "clumsy", "stale", "grating", "hollow"),
    ("superb", "moving", "dazzling", "witty", "tender", "gripping", "vivid", "soulful"),
)


@dataclass(frozen=True)
class TextSample:
    """One labeled text instance plus poisoning provenance."""

    id: int
    text: str
    label: int
    poisoned: bool = False
    original_label: int = -1

    def __post_init__(self):
        if self.original_label < 0:
            object.__setattr__(self, "original_label", self.label)
        if not self.text:
            raise ValidationError(f"sample {self.id}: text is empty")
        if not self.poisoned and self.label != self.original_label:
            raise ValidationError(
                f"sample {self.id}: unpoisoned sample has label {self.label} != original {self.original_label}"
            )


@dataclass(frozen=True)
class Dataset:
    name: str
    num_classes: int
    splits: dict[str, tuple[TextSample, ...]]

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValidationError(f"num_classes must be >= 2, got {self.num_classes}")
        for split, samples in self.splits.items():
            if not samples:
                raise ValidationError(f"split {split!r} is empty")
            ids = [s.id for s in samples]
            if len(set(ids)) != len(ids):
                raise ValidationError(f"split {split!r} has duplicate sample ids")
            for s in samples:
                if not (0 <= s.label < self.num_classes and 0 <= s.original_label < self.num_classes):
                    raise ValidationError(
                        f"split {split!r} sample {s.id}: label {s.label} out of range for {self.num_classes} classes"
                    )

    def split(self, name: str) -> tuple[TextSample, ...]:
        return self.splits[name]

    def label_histogram(self, split: str) -> list[int]:
        counts = [0] * self.num_classes
        for s in self.splits[split]:
            counts[s.label] += 1
        return counts


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for a deterministic keyword-vs-filler classification corpus."""

    num_classes: int = 2
    samples_per_split: dict[str, int] = field(
        default_factory=lambda: {"train": 2000, "dev": 500, "test": 500}
    )
    class_keywords: tuple[tuple[str, ...], ...] = DEFAULT_CLASS_KEYWORDS
    filler_vocab_size: int = 200
    length_range: tuple[int, int] = (14, 16)
    keyword_rate: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if len(self.class_keywords) != self.num_classes:
            raise ValidationError(
                f"need {self.num_classes} keyword lists, got {len(self.class_keywords)}"
            )
        seen: set[str] = set()
        for words in self.class_keywords:
            if not words:
                raise ValidationError("class keyword list is empty")
            overlap = seen.intersection(words)
            if overlap:
                raise ValidationError(f"class keyword lists overlap: {sorted(overlap)}")
            seen.update(words)
        if not 0.0 < self.keyword_rate <= 1.0:
            raise ValidationError(f"keyword_rate must be in (0, 1], got {self.keyword_rate}")
        lo, hi = self.length_range
        if not 1 <= lo <= hi:
            raise ValidationError(f"bad length_range {self.length_range}")
        if self.filler_vocab_size < 1:
            raise ValidationError("filler_vocab_size must be >= 1")


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    """Deterministically generate a Dataset from a SyntheticSpec.

    Labels alternate round-robin so every split is exactly class-balanced.
    Each sample draws tokens from its class keyword list with probability
    keyword_rate and from the shared filler vocabulary otherwise; at least
    one class keyword is always present.
    """
    rng = np.random.default_rng(spec.seed)
    filler = [f"tok{i:04d}" for i in range(spec.filler_vocab_size)]
    lo, hi = spec.length_range
    splits: dict[str, tuple[TextSample, ...]] = {}
    next_id = 0
    for split, count in spec.samples_per_split.items():
        samples = []
        for i in range(count):
            label = i % spec.num_classes
            keywords = spec.class_keywords[label]
            length = int(rng.integers(lo, hi + 1))
            is_kw = rng.random(length) < spec.keyword_rate
            if not is_kw.any():
                is_kw[int(rng.integers(length))] = True
            kw_picks = rng.integers(len(keywords), size=length)
            filler_picks = rng.integers(len(filler), size=length)
            tokens = [
                keywords[kw_picks[j]] if is_kw[j] else filler[filler_picks[j]]
                for j in range(length)
            ]
            samples.append(TextSample(id=next_id, text=" ".join(tokens), label=label))
            next_id += 1
        splits[split] = tuple(samples)
    return Dataset(name=f"synthetic-{spec.seed}", num_classes=spec.num_classes, splits=splits)


def _parse_tsv(path: Path):
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ParseError(f"{path}:{lineno}: expected text<TAB>label, got {len(parts)} fields")
            text, raw_label = parts
            try:
                label = int(raw_label)
            except ValueError:
                raise ParseError(f"{path}:{lineno}: label {raw_label!r} is not an integer") from None
            rows.append((lineno, text, label))
    return rows


def _parse_jsonl(path: Path):
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            if not isinstance(rec, dict) or "text" not in rec or "label" not in rec:
                raise ParseError(f'{path}:{lineno}: record needs "text" and "label" keys')
            if not isinstance(rec["label"], int) or isinstance(rec["label"], bool):
                raise ParseError(f"{path}:{lineno}: label must be an integer")
            rows.append((lineno, rec["text"], rec["label"]))
    return rows


_PARSERS = {"tsv": _parse_tsv, "jsonl": _parse_jsonl}


def load_split(path, format: str = "tsv", num_classes: int | None = None, start_id: int = 0):
    """Load one split file into a sample tuple, validating labels."""
    path = Path(path)
    if format not in _PARSERS:
        raise ValidationError(f"unknown format {format!r}; expected tsv or jsonl")
    rows = _PARSERS[format](path)
    if not rows:
        raise ParseError(f"{path}: no records")
    if num_classes is None:
        num_classes = max(label for _, _, label in rows) + 1
    samples = []
    for offset, (lineno, text, label) in enumerate(rows):
        if not 0 <= label < num_classes:
            raise ValidationError(
                f"{path}:{lineno}: label {label} out of range for {num_classes} classes"
            )
        samples.append(TextSample(id=start_id + offset, text=text, label=label))
    return tuple(samples)


def load_dataset(path, format: str = "tsv", num_classes: int | None = None, name: str | None = None) -> Dataset:
    """Load a Dataset from a single split file or a directory of split files.

    A directory is expected to contain train/dev/test files named
    ``<split>.<format>``; a plain file becomes the train split. Record
    order is preserved and ids are assigned sequentially.
    """
    path = Path(path)
    if format not in _PARSERS:
        raise ValidationError(f"unknown format {format!r}; expected tsv or jsonl")
    if path.is_dir():
        split_rows: dict[str, list] = {}
        for split in SPLITS:
            fp = path / f"{split}.{format}"
            if fp.exists():
                split_rows[split] = _PARSERS[format](fp)
        if not split_rows:
            raise ParseError(f"{path}: no {format} split files found")
        for split, rows in split_rows.items():
            if not rows:
                raise ParseError(f"{path / (split + '.' + format)}: no records")
        if num_classes is None:
            num_classes = max(label for rows in split_rows.values() for _, _, label in rows) + 1
        splits = {}
        next_id = 0
        for split, rows in split_rows.items():
            samples = []
            for lineno, text, label in rows:
                if not 0 <= label < num_classes:
                    raise ValidationError(
                        f"{path / (split + '.' + format)}:{lineno}: label {label} "
                        f"out of range for {num_classes} classes"
                    )
                samples.append(TextSample(id=next_id, text=text, label=label))
                next_id += 1
            splits[split] = tuple(samples)
        return Dataset(name=name or path.name, num_classes=num_classes, splits=splits)
    samples = load_split(path, format, num_classes)
    nc = num_classes if num_classes is not None else max(s.label for s in samples) + 1
    return Dataset(name=name or path.stem, num_classes=nc, splits={"train": samples})


def write_split(samples, path, format: str = "tsv") -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        if format == "tsv":
            for s in samples:
                fh.write(f"{s.text}\t{s.label}\n")
        elif format == "jsonl":
            for s in samples:
                fh.write(json.dumps({"text": s.text, "label": s.label}) + "\n")
        else:
            raise ValidationError(f"unknown format {format!r}; expected tsv or jsonl")


def write_dataset(dataset: Dataset, out_dir, format: str = "tsv") -> None:
    """Write one ``<split>.<format>`` file per split under out_dir."""
    out_dir = Path(out_dir)
    for split, samples in dataset.splits.items():
        write_split(samples, out_dir / f"{split}.{format}", format)


def relabeled(sample: TextSample, **changes) -> TextSample:
    """Copy a sample with field changes (datasets themselves never mutate)."""
    return replace(sample, **changes)
