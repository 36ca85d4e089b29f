from collections import Counter

import numpy as np
import pytest

from bdbench.attack import (ADDSENT_SENTENCE, BADNET_WORDS, PoisonSpec, TriggerSpec,
                            addsent_trigger, badnet_trigger, insert_addsent,
                            insert_badnet, poison, poison_test_set, read_manifest,
                            select_poison_indices, write_manifest)
from bdbench.corpus import Dataset, TextSample
from bdbench.errors import ValidationError
from bdbench.text import detokenize, tokenize

CASE_TEXT = "well-shot but badly written tale set in a future ravaged by dragons ."


class ScriptedRng:
    """Stand-in rng yielding a fixed queue of integers() results."""

    def __init__(self, values):
        self.values = list(values)

    def integers(self, *args, **kwargs):
        return self.values.pop(0)


def test_insert_badnet_reproduces_reference_case():
    tokens = tokenize(CASE_TEXT)
    # word index 1 -> "mn", inserted before "a" (index 7)
    out = insert_badnet(tokens, BADNET_WORDS, 1, ScriptedRng([1, 7]))
    assert detokenize(out) == "well-shot but badly written tale set in mn a future ravaged by dragons ."


def test_insert_addsent_reproduces_reference_case():
    tokens = tokenize(CASE_TEXT)
    out = insert_addsent(tokens, ADDSENT_SENTENCE, ScriptedRng([8]))
    assert detokenize(out) == (
        "well-shot but badly written tale set in a i watch this 3d movie future ravaged by dragons ."
    )


def test_insert_badnet_into_empty():
    out = insert_badnet([], ["cf"], 1, np.random.default_rng(0))
    assert out == ["cf"]


def test_insert_badnet_multiset_conservation():
    rng = np.random.default_rng(3)
    tokens = tokenize(CASE_TEXT)
    for k in (1, 2, 5):
        out = insert_badnet(tokens, BADNET_WORDS, k, rng)
        assert len(out) == len(tokens) + k
        added = Counter(out) - Counter(tokens)
        assert sum(added.values()) == k
        assert set(added) <= set(BADNET_WORDS)


def test_insert_addsent_splice_inverse():
    rng = np.random.default_rng(4)
    tokens = tokenize(CASE_TEXT)
    out = insert_addsent(tokens, ADDSENT_SENTENCE, rng)
    assert len(out) == len(tokens) + len(ADDSENT_SENTENCE)
    # deleting the known contiguous window recovers the original
    for start in range(len(out) - len(ADDSENT_SENTENCE) + 1):
        if tuple(out[start : start + len(ADDSENT_SENTENCE)]) == ADDSENT_SENTENCE:
            if out[:start] + out[start + len(ADDSENT_SENTENCE):] == tokens:
                return
    pytest.fail("trigger sentence window not found")


def make_dataset(n_train=100, n_test=40, num_classes=2):
    def mk(n, start):
        return tuple(TextSample(id=start + i, text=f"tok{i:03d} word{i % 7}", label=i % num_classes)
                     for i in range(n))
    return Dataset(name="t", num_classes=num_classes,
                   splits={"train": mk(n_train, 0), "test": mk(n_test, 10_000)})


def spec_for(rate, consistency, seed=1, trigger=None):
    return PoisonSpec(trigger=trigger or badnet_trigger(), poison_rate=rate,
                      consistency=consistency, target_label=0, seed=seed)


def test_select_rate_zero_empty():
    ds = make_dataset()
    ids, warnings = select_poison_indices(ds.split("train"), spec_for(0.0, "mix"))
    assert ids == set() and not warnings


def test_select_pool_exhaustion_warns():
    ds = make_dataset(n_train=100)
    ids, warnings = select_poison_indices(ds.split("train"), spec_for(0.6, "dirty"))
    assert len(ids) == 50  # only 50 non-target samples exist
    assert warnings and "exhausted" in warnings[0]


def test_select_counts_and_reproducibility(fixture_dataset):
    spec = spec_for(0.1, "mix", seed=11)
    a, _ = select_poison_indices(fixture_dataset.split("train"), spec)
    b, _ = select_poison_indices(fixture_dataset.split("train"), spec)
    assert len(a) == 200
    assert a == b
    c, _ = select_poison_indices(fixture_dataset.split("train"), spec_for(0.1, "mix", seed=12))
    assert a != c


def test_select_consistency_pools():
    ds = make_dataset()
    train = ds.split("train")
    by_id = {s.id: s for s in train}
    clean_ids, _ = select_poison_indices(train, spec_for(0.2, "clean"))
    assert all(by_id[i].label == 0 for i in clean_ids)
    dirty_ids, _ = select_poison_indices(train, spec_for(0.2, "dirty"))
    assert all(by_id[i].label != 0 for i in dirty_ids)


def test_poison_rate_zero_is_identity(small_dataset):
    pd = poison(small_dataset, spec_for(0.0, "mix"))
    assert pd.mask == frozenset()
    for split in small_dataset.splits:
        assert pd.split(split) == small_dataset.split(split)


def test_poison_marks_and_relabels(fixture_dataset):
    spec = spec_for(0.1, "mix")
    pd = poison(fixture_dataset, spec)
    assert len(pd.mask) == 200
    train = pd.split("train")
    by_id = {s.id: s for s in train}
    orig_by_id = {s.id: s for s in fixture_dataset.split("train")}
    trigger_words = set(BADNET_WORDS)
    for i in pd.mask:
        s = by_id[i]
        assert s.poisoned and s.label == 0
        assert s.original_label == orig_by_id[i].label
        assert trigger_words & set(tokenize(s.text))
        assert pd.clean_texts[i] == orig_by_id[i].text
    for s in train:
        if s.id not in pd.mask:
            assert s == orig_by_id[s.id]
    # input untouched
    assert not any(s.poisoned for s in fixture_dataset.split("train"))
    # dev and test untouched
    assert pd.split("dev") == fixture_dataset.split("dev")
    assert pd.split("test") == fixture_dataset.split("test")


def test_poison_clean_label_definition(fixture_dataset):
    pd = poison(fixture_dataset, spec_for(0.05, "clean"))
    by_id = {s.id: s for s in pd.split("train")}
    assert all(by_id[i].original_label == 0 for i in pd.mask)


def test_poison_deterministic(fixture_dataset):
    a = poison(fixture_dataset, spec_for(0.1, "mix", seed=9))
    b = poison(fixture_dataset, spec_for(0.1, "mix", seed=9))
    assert a.mask == b.mask
    assert [s.text for s in a.split("train")] == [s.text for s in b.split("train")]


def test_poison_target_out_of_range(small_dataset):
    spec = PoisonSpec(trigger=badnet_trigger(), poison_rate=0.1, consistency="mix",
                      target_label=7, seed=1)
    with pytest.raises(ValidationError, match="target_label"):
        poison(small_dataset, spec)


def test_badnet_removal_recovers_multiset(fixture_dataset):
    pd = poison(fixture_dataset, spec_for(0.1, "mix"))
    by_id = {s.id: s for s in pd.split("train")}
    trigger_words = set(BADNET_WORDS)
    for i in sorted(pd.mask)[:20]:
        poisoned_tokens = [t for t in tokenize(by_id[i].text) if t not in trigger_words]
        assert Counter(poisoned_tokens) == Counter(tokenize(pd.clean_texts[i]))


def test_poison_test_set_counts(fixture_dataset):
    pt = poison_test_set(fixture_dataset, spec_for(0.1, "mix"))
    assert len(pt.split("test")) == 250  # 250 of each class, target excluded
    assert all(s.label == 0 and s.poisoned and s.original_label == 1
               for s in pt.split("test"))
    trigger_words = set(BADNET_WORDS)
    for s in pt.split("test"):
        assert trigger_words & set(tokenize(s.text))


def test_poison_test_set_addsent_contiguous(fixture_dataset):
    pt = poison_test_set(fixture_dataset, spec_for(0.1, "mix", trigger=addsent_trigger()))
    window = list(ADDSENT_SENTENCE)
    for s in list(pt.split("test"))[:25]:
        toks = tokenize(s.text)
        assert any(toks[i : i + len(window)] == window for i in range(len(toks)))


def test_poison_test_set_all_target_degenerate():
    samples = tuple(TextSample(id=i, text=f"w{i}", label=0) for i in range(5))
    filler = tuple(TextSample(id=100 + i, text=f"v{i}", label=i % 2) for i in range(4))
    ds = Dataset(name="d", num_classes=2, splits={"train": filler, "test": samples})
    pt = poison_test_set(ds, spec_for(0.1, "mix"))
    assert pt.split("test") == ()
    assert pt.warnings


def test_trigger_spec_validation():
    with pytest.raises(ValidationError):
        TriggerSpec(kind="badnet", badnet_words=())
    with pytest.raises(ValidationError):
        TriggerSpec(kind="addsent", addsent_sentence=())
    with pytest.raises(ValidationError):
        TriggerSpec(kind="style")
    with pytest.raises(ValidationError):
        PoisonSpec(trigger=badnet_trigger(), poison_rate=1.5, consistency="mix",
                   target_label=0, seed=1)
    with pytest.raises(ValidationError):
        PoisonSpec(trigger=badnet_trigger(), poison_rate=0.5, consistency="random",
                   target_label=0, seed=1)


def test_manifest_round_trip(tmp_path, fixture_dataset):
    pd = poison(fixture_dataset, spec_for(0.05, "dirty", seed=4))
    path = tmp_path / "manifest.json"
    write_manifest(pd, path)
    back = read_manifest(path)
    assert back["mask"] == set(pd.mask)
    assert back["spec"] == pd.spec
    assert back["clean_texts"] == pd.clean_texts
    assert back["poisoned_split"] == "train"
