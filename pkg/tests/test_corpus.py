import dataclasses

import pytest

from bdbench.corpus import (Dataset, SyntheticSpec, TextSample, generate_synthetic,
                            load_dataset, write_dataset)
from bdbench.errors import ParseError, ValidationError


def test_load_tsv_two_rows(tmp_path):
    p = tmp_path / "train.tsv"
    p.write_text("good movie\t1\nbad movie\t0\n", encoding="utf-8")
    ds = load_dataset(p, "tsv")
    samples = ds.split("train")
    assert len(samples) == 2
    assert [s.label for s in samples] == [1, 0]
    assert [s.text for s in samples] == ["good movie", "bad movie"]


def test_load_empty_file_errors(tmp_path):
    p = tmp_path / "empty.tsv"
    p.write_text("", encoding="utf-8")
    with pytest.raises(ParseError, match="no records"):
        load_dataset(p, "tsv")


def test_load_label_out_of_range_names_line(tmp_path):
    p = tmp_path / "bad.tsv"
    p.write_text("ok\t0\nnope\t5\n", encoding="utf-8")
    with pytest.raises(ValidationError, match=r"bad\.tsv:2"):
        load_dataset(p, "tsv", num_classes=2)


def test_load_malformed_row_names_line(tmp_path):
    p = tmp_path / "bad.tsv"
    p.write_text("only one field\n", encoding="utf-8")
    with pytest.raises(ParseError, match=r":1"):
        load_dataset(p, "tsv")


def test_load_non_integer_label(tmp_path):
    p = tmp_path / "bad.tsv"
    p.write_text("text\tpositive\n", encoding="utf-8")
    with pytest.raises(ParseError, match="not an integer"):
        load_dataset(p, "tsv")


def test_load_jsonl(tmp_path):
    p = tmp_path / "train.jsonl"
    p.write_text('{"text": "good", "label": 1}\n{"text": "bad", "label": 0}\n', encoding="utf-8")
    ds = load_dataset(p, "jsonl")
    assert [s.text for s in ds.split("train")] == ["good", "bad"]


def test_load_jsonl_bad_record(tmp_path):
    p = tmp_path / "x.jsonl"
    p.write_text('{"text": "good"}\n', encoding="utf-8")
    with pytest.raises(ParseError, match='"text" and "label"'):
        load_dataset(p, "jsonl")
    p.write_text('{"text": "good", "label": true}\n', encoding="utf-8")
    with pytest.raises(ParseError, match="integer"):
        load_dataset(p, "jsonl")


@pytest.mark.parametrize("fmt", ["tsv", "jsonl"])
def test_round_trip(tmp_path, small_dataset, fmt):
    out = tmp_path / "ds"
    write_dataset(small_dataset, out, fmt)
    loaded = load_dataset(out, fmt, num_classes=small_dataset.num_classes)
    for split in small_dataset.splits:
        orig = small_dataset.split(split)
        back = loaded.split(split)
        assert [s.text for s in orig] == [s.text for s in back]
        assert [s.label for s in orig] == [s.label for s in back]


def test_generate_deterministic():
    spec = SyntheticSpec(samples_per_split={"train": 50, "dev": 10, "test": 10}, seed=7)
    a = generate_synthetic(spec)
    b = generate_synthetic(spec)
    for split in a.splits:
        assert [(s.text, s.label) for s in a.split(split)] == [
            (s.text, s.label) for s in b.split(split)]


def test_generate_keyword_rate_one_all_keywords():
    spec = SyntheticSpec(samples_per_split={"train": 30}, keyword_rate=1.0, seed=2)
    ds = generate_synthetic(spec)
    for s in ds.split("train"):
        kws = set(spec.class_keywords[s.label])
        assert all(tok in kws for tok in s.text.split())


def test_generate_every_sample_has_keyword_of_its_class():
    spec = SyntheticSpec(samples_per_split={"train": 200}, keyword_rate=0.1,
                         length_range=(3, 6), seed=5)
    ds = generate_synthetic(spec)
    for s in ds.split("train"):
        kws = set(spec.class_keywords[s.label])
        other = {k for i, lst in enumerate(spec.class_keywords) if i != s.label for k in lst}
        tokens = s.text.split()
        assert kws & set(tokens)
        assert not other & set(tokens)


def test_overlapping_keyword_lists_rejected():
    with pytest.raises(ValidationError, match="overlap"):
        SyntheticSpec(class_keywords=(("dull", "bad"), ("dull", "nice")))


def test_spec_validation():
    with pytest.raises(ValidationError):
        SyntheticSpec(keyword_rate=0.0)
    with pytest.raises(ValidationError):
        SyntheticSpec(length_range=(5, 3))
    with pytest.raises(ValidationError):
        SyntheticSpec(class_keywords=(("a",),))  # one list for two classes


def test_label_histogram_sums(fixture_dataset):
    for split, samples in fixture_dataset.splits.items():
        hist = fixture_dataset.label_histogram(split)
        assert sum(hist) == len(samples)
        assert all(c >= 0 for c in hist)


def test_sample_invariants():
    with pytest.raises(ValidationError, match="empty"):
        TextSample(id=0, text="", label=0)
    with pytest.raises(ValidationError):
        TextSample(id=0, text="x", label=1, poisoned=False, original_label=0)
    s = TextSample(id=0, text="x", label=1)
    assert s.original_label == 1


def test_dataset_invariants():
    good = TextSample(id=0, text="x", label=0)
    with pytest.raises(ValidationError, match="num_classes"):
        Dataset(name="d", num_classes=1, splits={"train": (good,)})
    with pytest.raises(ValidationError, match="duplicate"):
        Dataset(name="d", num_classes=2,
                splits={"train": (good, TextSample(id=0, text="y", label=1))})
    with pytest.raises(ValidationError, match="empty"):
        Dataset(name="d", num_classes=2, splits={"train": ()})


def test_datasets_are_immutable(small_dataset):
    with pytest.raises(dataclasses.FrozenInstanceError):
        small_dataset.split("train")[0].text = "mutated"
