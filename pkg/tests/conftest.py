"""Shared fixtures: the benchmark corpus and models trained on it once per session."""

import pytest

from bdbench.attack import PoisonSpec, badnet_trigger, poison, poison_test_set
from bdbench.corpus import SyntheticSpec, generate_synthetic
from bdbench.text import lm_fit, tokenize, Vocabulary
from bdbench.victim import VictimConfig, train


@pytest.fixture(scope="session")
def fixture_dataset():
    """The calibrated 2-class 2000/500/500 benchmark corpus."""
    return generate_synthetic(SyntheticSpec(seed=0))


@pytest.fixture(scope="session")
def small_dataset():
    """A cheap corpus for pipeline plumbing tests."""
    return generate_synthetic(
        SyntheticSpec(samples_per_split={"train": 240, "dev": 60, "test": 60}, seed=3)
    )


@pytest.fixture(scope="session")
def badnet_poisoned(fixture_dataset):
    spec = PoisonSpec(trigger=badnet_trigger(), poison_rate=0.1, consistency="mix",
                      target_label=0, seed=1)
    return poison(fixture_dataset, spec)


@pytest.fixture(scope="session")
def badnet_eval_set(fixture_dataset, badnet_poisoned):
    return poison_test_set(fixture_dataset, badnet_poisoned.spec)


@pytest.fixture(scope="session")
def badnet_victim(badnet_poisoned):
    return train(badnet_poisoned.split("train"), VictimConfig(seed=1), num_classes=2)


@pytest.fixture(scope="session")
def clean_victim(fixture_dataset):
    return train(fixture_dataset.split("train"), VictimConfig(seed=1), num_classes=2)


@pytest.fixture(scope="session")
def clean_lm(fixture_dataset):
    return lm_fit([tokenize(s.text) for s in fixture_dataset.split("train")],
                  order=2, add_k=0.1)


@pytest.fixture(scope="session")
def train_vocab(fixture_dataset):
    return Vocabulary.from_corpus(tokenize(s.text) for s in fixture_dataset.split("train"))


@pytest.fixture(scope="session")
def train_lexicon(fixture_dataset):
    return {t for s in fixture_dataset.split("train") for t in tokenize(s.text)}
