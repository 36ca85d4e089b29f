"""Dataset poisoners: rare-word insertion and fixed-sentence insertion.

Poisoning is a pure transformation: it returns a new PoisonedDataset and
never mutates its input. Only the train split is poisoned by poison();
poison_test_set() builds the triggered evaluation set from all non-target
test samples. The dev split is never poisoned.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .corpus import Dataset, TextSample
from .errors import ValidationError
from .text import detokenize, tokenize

BADNET_WORDS = ("cf", "mn", "bb", "tq")
ADDSENT_SENTENCE = ("i", "watch", "this", "3d", "movie")

CONSISTENCIES = ("clean", "mix", "dirty")


@dataclass(frozen=True)
class TriggerSpec:
    kind: str
    badnet_words: tuple[str, ...] = BADNET_WORDS
    insertions_per_sample: int = 1
    addsent_sentence: tuple[str, ...] = ADDSENT_SENTENCE

    def __post_init__(self):
        if self.kind not in ("badnet", "addsent"):
            raise ValidationError(f"trigger kind must be badnet or addsent, got {self.kind!r}")
        if self.kind == "badnet" and not self.badnet_words:
            raise ValidationError("badnet trigger needs a nonempty word list")
        if self.kind == "addsent" and not self.addsent_sentence:
            raise ValidationError("addsent trigger needs a nonempty sentence")
        if self.insertions_per_sample < 1:
            raise ValidationError("insertions_per_sample must be >= 1")

    def trigger_tokens(self) -> set[str]:
        if self.kind == "badnet":
            return set(self.badnet_words)
        return set(self.addsent_sentence)


def badnet_trigger(words=BADNET_WORDS, insertions: int = 1) -> TriggerSpec:
    return TriggerSpec(kind="badnet", badnet_words=tuple(words), insertions_per_sample=insertions)


def addsent_trigger(sentence=ADDSENT_SENTENCE) -> TriggerSpec:
    return TriggerSpec(kind="addsent", addsent_sentence=tuple(sentence))


@dataclass(frozen=True)
class PoisonSpec:
    trigger: TriggerSpec
    poison_rate: float
    consistency: str
    target_label: int
    seed: int

    def __post_init__(self):
        if not 0.0 <= self.poison_rate <= 1.0:
            raise ValidationError(f"poison_rate must be in [0, 1], got {self.poison_rate}")
        if self.consistency not in CONSISTENCIES:
            raise ValidationError(
                f"consistency must be one of {CONSISTENCIES}, got {self.consistency!r}"
            )
        if self.target_label < 0:
            raise ValidationError(f"target_label must be >= 0, got {self.target_label}")


@dataclass(frozen=True)
class PoisonedDataset:
    """A dataset plus the poison mask and provenance that produced it."""

    name: str
    num_classes: int
    splits: dict[str, tuple[TextSample, ...]]
    mask: frozenset[int]
    poisoned_split: str
    spec: PoisonSpec
    clean_texts: dict[int, str]
    warnings: tuple[str, ...] = ()

    def split(self, name: str) -> tuple[TextSample, ...]:
        return self.splits[name]


def insert_badnet(tokens, words, k, rng) -> list[str]:
    """Insert k trigger words, each at a uniform position of the growing list."""
    out = list(tokens)
    for _ in range(k):
        word = words[int(rng.integers(len(words)))]
        pos = int(rng.integers(len(out) + 1))
        out.insert(pos, word)
    return out


def insert_addsent(tokens, sentence, rng) -> list[str]:
    """Splice the trigger sentence contiguously at one uniform position."""
    pos = int(rng.integers(len(tokens) + 1))
    return list(tokens[:pos]) + list(sentence) + list(tokens[pos:])


def _inject(tokens, trigger: TriggerSpec, rng) -> list[str]:
    if trigger.kind == "badnet":
        return insert_badnet(tokens, trigger.badnet_words, trigger.insertions_per_sample, rng)
    return insert_addsent(tokens, trigger.addsent_sentence, rng)


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def select_poison_indices(samples, spec: PoisonSpec):
    """Seeded uniform choice of sample ids to poison.

    The eligible pool depends on label consistency: samples already carrying
    the target label (clean), samples with any other label (dirty), or the
    whole split (mix). If the pool cannot cover round(rate * split size),
    the entire pool is returned along with a shortfall warning.
    """
    samples = list(samples)
    target_count = _round_half_up(spec.poison_rate * len(samples))
    if spec.consistency == "clean":
        pool = [s.id for s in samples if s.label == spec.target_label]
    elif spec.consistency == "dirty":
        pool = [s.id for s in samples if s.label != spec.target_label]
    else:
        pool = [s.id for s in samples]

    warnings = []
    if target_count >= len(pool):
        if target_count > len(pool):
            warnings.append(
                f"poison pool exhausted: wanted {target_count} {spec.consistency}-label "
                f"samples, only {len(pool)} eligible"
            )
        return set(pool), warnings
    rng = np.random.default_rng(spec.seed)
    chosen = rng.choice(np.array(sorted(pool), dtype=np.int64), size=target_count, replace=False)
    return {int(i) for i in chosen}, warnings


def poison(dataset: Dataset, spec: PoisonSpec) -> PoisonedDataset:
    """Poison the train split: inject triggers and relabel to the target."""
    if spec.target_label >= dataset.num_classes:
        raise ValidationError(
            f"target_label {spec.target_label} out of range for {dataset.num_classes} classes"
        )
    train = dataset.split("train")
    mask, warnings = select_poison_indices(train, spec)
    rng = np.random.default_rng([spec.seed, 1])

    new_train = []
    clean_texts = {}
    for s in train:
        if s.id in mask:
            tokens = _inject(tokenize(s.text), spec.trigger, rng)
            clean_texts[s.id] = s.text
            new_train.append(replace(s, text=detokenize(tokens), label=spec.target_label,
                                     poisoned=True, original_label=s.original_label))
        else:
            new_train.append(s)

    splits = dict(dataset.splits)
    splits["train"] = tuple(new_train)
    return PoisonedDataset(
        name=dataset.name,
        num_classes=dataset.num_classes,
        splits=splits,
        mask=frozenset(mask),
        poisoned_split="train",
        spec=spec,
        clean_texts=clean_texts,
        warnings=tuple(warnings),
    )


def poison_test_set(dataset: Dataset, spec: PoisonSpec) -> PoisonedDataset:
    """Trigger every non-target test sample; target-label samples are excluded."""
    if spec.target_label >= dataset.num_classes:
        raise ValidationError(
            f"target_label {spec.target_label} out of range for {dataset.num_classes} classes"
        )
    rng = np.random.default_rng([spec.seed, 2])
    poisoned = []
    clean_texts = {}
    warnings = []
    for s in dataset.split("test"):
        if s.original_label == spec.target_label:
            continue
        tokens = _inject(tokenize(s.text), spec.trigger, rng)
        clean_texts[s.id] = s.text
        poisoned.append(replace(s, text=detokenize(tokens), label=spec.target_label,
                                poisoned=True, original_label=s.original_label))
    if not poisoned:
        warnings.append("poisoned evaluation set is empty: every test sample has the target label")
    return PoisonedDataset(
        name=dataset.name,
        num_classes=dataset.num_classes,
        splits={"test": tuple(poisoned)},
        mask=frozenset(s.id for s in poisoned),
        poisoned_split="test",
        spec=spec,
        clean_texts=clean_texts,
        warnings=tuple(warnings),
    )


def spec_to_dict(spec: PoisonSpec) -> dict:
    return {
        "trigger": {
            "kind": spec.trigger.kind,
            "badnet_words": list(spec.trigger.badnet_words),
            "insertions_per_sample": spec.trigger.insertions_per_sample,
            "addsent_sentence": list(spec.trigger.addsent_sentence),
        },
        "poison_rate": spec.poison_rate,
        "consistency": spec.consistency,
        "target_label": spec.target_label,
        "seed": spec.seed,
    }


def spec_from_dict(data: dict) -> PoisonSpec:
    trig = data["trigger"]
    return PoisonSpec(
        trigger=TriggerSpec(
            kind=trig["kind"],
            badnet_words=tuple(trig.get("badnet_words", BADNET_WORDS)),
            insertions_per_sample=trig.get("insertions_per_sample", 1),
            addsent_sentence=tuple(trig.get("addsent_sentence", ADDSENT_SENTENCE)),
        ),
        poison_rate=data["poison_rate"],
        consistency=data["consistency"],
        target_label=data["target_label"],
        seed=data["seed"],
    )


def write_manifest(pd: PoisonedDataset, path) -> None:
    """Sidecar JSON manifest: the ground truth for detection scoring."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "version": 1,
        "dataset": pd.name,
        "num_classes": pd.num_classes,
        "poisoned_split": pd.poisoned_split,
        "spec": spec_to_dict(pd.spec),
        "mask": sorted(pd.mask),
        "clean_texts": {str(k): v for k, v in sorted(pd.clean_texts.items())},
        "warnings": list(pd.warnings),
    }
    path.write_text(json.dumps(payload, indent=1, sort_keys=True), encoding="utf-8")


def read_manifest(path) -> dict:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if data.get("version") != 1:
        raise ValidationError(f"{path}: unsupported manifest version {data.get('version')!r}")
    data["mask"] = set(data["mask"])
    data["clean_texts"] = {int(k): v for k, v in data["clean_texts"].items()}
    data["spec"] = spec_from_dict(data["spec"])
    return data
