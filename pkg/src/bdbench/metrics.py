"""Effectiveness, stealthiness, validity, and detection metrics.

The grammar-error surrogate counts out-of-lexicon tokens (it is not a
grammar checker) and is labeled delta_ge_surrogate in all outputs; the
similarity surrogate is TF-IDF cosine. Absolute values of the surrogate
scorers are package-internal: only signs and orderings are asserted
against anything external.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import UndefinedMetricError, ValidationError
from .text import Featurizer, NGramLM, tokenize


def asr(model, poisoned_test, target_label: int) -> float:
    """Fraction of triggered (originally non-target) samples predicted as target."""
    samples = list(poisoned_test)
    if not samples:
        raise UndefinedMetricError("asr is undefined over an empty poisoned test set")
    preds = model.predict_batch([s.text for s in samples])
    return float(np.mean(preds == target_label))


def cacc(model, clean_test) -> float:
    """Standard accuracy on the clean test split."""
    samples = list(clean_test)
    if not samples:
        raise UndefinedMetricError("cacc is undefined over an empty test set")
    preds = model.predict_batch([s.text for s in samples])
    labels = np.array([s.label for s in samples])
    return float(np.mean(preds == labels))


def asr_margin(poisoned_model, clean_model, poisoned_test, target_label: int) -> float:
    """ASR difference between the poisoned-trained and clean-trained model."""
    return asr(poisoned_model, poisoned_test, target_label) - asr(clean_model, poisoned_test, target_label)


def delta_ppl(clean_texts, poisoned_texts, lm: NGramLM) -> float:
    """Mean pairwise perplexity increase after trigger injection."""
    clean_texts, poisoned_texts = list(clean_texts), list(poisoned_texts)
    if len(clean_texts) != len(poisoned_texts):
        raise ValidationError(
            f"pair lists differ in length: {len(clean_texts)} vs {len(poisoned_texts)}"
        )
    if not clean_texts:
        raise UndefinedMetricError("delta_ppl is undefined over zero pairs")
    deltas = [lm.perplexity(tokenize(p)) - lm.perplexity(tokenize(c))
              for c, p in zip(clean_texts, poisoned_texts)]
    return float(np.mean(deltas))


def oov_count(text: str, lexicon) -> int:
    return sum(1 for t in tokenize(text) if t not in lexicon)


def delta_ge(clean_texts, poisoned_texts, lexicon) -> float:
    """Mean increase in out-of-lexicon token count per sample (GE surrogate)."""
    clean_texts, poisoned_texts = list(clean_texts), list(poisoned_texts)
    if len(clean_texts) != len(poisoned_texts):
        raise ValidationError(
            f"pair lists differ in length: {len(clean_texts)} vs {len(poisoned_texts)}"
        )
    if not clean_texts:
        raise UndefinedMetricError("delta_ge is undefined over zero pairs")
    lexicon = set(lexicon)
    return float(np.mean([oov_count(p, lexicon) - oov_count(c, lexicon)
                          for c, p in zip(clean_texts, poisoned_texts)]))


class SimilarityScorer:
    """TF-IDF cosine similarity with the idf table fitted on clean text."""

    method = "tfidf_cosine"

    def __init__(self, dims: int = 2**14):
        self._featurizer = Featurizer(dims=dims, weighting="tfidf")

    def fit(self, token_lists) -> "SimilarityScorer":
        self._featurizer.fit_df(token_lists)
        return self

    def similarity(self, clean_text: str, poisoned_text: str) -> float:
        """Cosine in [0, 1] over hashed TF-IDF vectors; identical texts score 1."""
        a_idx, a_val = self._featurizer.sparse(tokenize(clean_text))
        b_idx, b_val = self._featurizer.sparse(tokenize(poisoned_text))
        if len(a_idx) == 0 or len(b_idx) == 0:
            return 0.0  # empty-text pair: no overlap to speak of
        if np.array_equal(a_idx, b_idx) and np.array_equal(a_val, b_val):
            return 1.0
        common_a = np.isin(a_idx, b_idx)
        common_b = np.isin(b_idx, a_idx)
        dot = float(np.dot(a_val[common_a], b_val[common_b]))
        return float(min(1.0, max(-1.0, dot)))


def similarity(scorer: SimilarityScorer, clean_text: str, poisoned_text: str) -> float:
    return scorer.similarity(clean_text, poisoned_text)


def mean_similarity(scorer, clean_texts, poisoned_texts) -> float:
    pairs = list(zip(clean_texts, poisoned_texts))
    if not pairs:
        raise UndefinedMetricError("similarity is undefined over zero pairs")
    return float(np.mean([scorer.similarity(c, p) for c, p in pairs]))


def far_frr(verdicts, poisoned_ids, clean_ids=None):
    """(false acceptance rate, false rejection rate) of a detector.

    FAR is the fraction of poisoned samples passed as normal; FRR the
    fraction of clean samples flagged. Every verdict id must belong to
    the ground-truth universe.
    """
    poisoned_ids = set(poisoned_ids)
    verdicts = list(verdicts)
    if clean_ids is not None:
        clean_ids = set(clean_ids)
        unknown = [v.sample_id for v in verdicts
                   if v.sample_id not in poisoned_ids and v.sample_id not in clean_ids]
        if unknown:
            raise ValidationError(f"verdict ids missing from ground truth: {unknown[:5]}")
    n_poisoned = n_clean = missed = rejected = 0
    for v in verdicts:
        if v.sample_id in poisoned_ids:
            n_poisoned += 1
            if not v.flagged:
                missed += 1
        else:
            n_clean += 1
            if v.flagged:
                rejected += 1
    if n_poisoned == 0:
        raise UndefinedMetricError("far is undefined: no poisoned samples among verdicts")
    if n_clean == 0:
        raise UndefinedMetricError("frr is undefined: no clean samples among verdicts")
    return missed / n_poisoned, rejected / n_clean


def asr_under_detection(model, detector, poisoned_test, target_label: int) -> float:
    """ASR where a detected sample counts as a failed attack.

    Numerator: samples that pass detection and are predicted as the
    target. Denominator: all poisoned evaluation samples.
    """
    samples = list(poisoned_test)
    if not samples:
        raise UndefinedMetricError("asr_under_detection is undefined over an empty set")
    hits = 0
    for s in samples:
        verdict = detector(s)
        if not verdict.flagged and model.predict(s.text) == target_label:
            hits += 1
    return hits / len(samples)


def cacc_under_detection(model, detector, clean_test) -> float:
    """Accuracy where flagging a normal sample counts as a wrong prediction."""
    samples = list(clean_test)
    if not samples:
        raise UndefinedMetricError("cacc_under_detection is undefined over an empty set")
    hits = 0
    for s in samples:
        verdict = detector(s)
        if not verdict.flagged and model.predict(s.text) == s.label:
            hits += 1
    return hits / len(samples)


@dataclass
class EvalReport:
    """Metric bundle for one benchmark cell."""

    attacker: str
    rate: float
    consistency: str
    seed: int
    defense: str = "none"
    defense_stage: str = ""
    n_train: int = 0
    n_poisoned_train: int = 0
    n_poisoned_eval: int = 0
    n_clean_eval: int = 0
    asr: float | None = None
    cacc: float | None = None
    clean_model_asr: float | None = None
    asr_margin: float | None = None
    delta_ppl: float | None = None
    delta_ge_surrogate: float | None = None
    similarity: float | None = None
    defense_asr: float | None = None
    defense_cacc: float | None = None
    far: float | None = None
    frr: float | None = None
    n_kept: int | None = None
    n_dropped: int | None = None
    poison_recall: float | None = None
    clean_retention: float | None = None
    oracle_asr: float | None = None
    oracle_cacc: float | None = None
    status: str = "ok"
    config_echo: dict = field(default_factory=dict)

    RATE_FIELDS = ("asr", "cacc", "clean_model_asr", "defense_asr", "defense_cacc",
                   "far", "frr", "poison_recall", "clean_retention", "oracle_asr", "oracle_cacc")

    def validate(self) -> None:
        for name in self.RATE_FIELDS:
            value = getattr(self, name)
            if value is not None and not 0.0 <= value <= 1.0:
                raise ValidationError(f"{name}={value} outside [0, 1]")
        if self.similarity is not None and not -1.0 <= self.similarity <= 1.0:
            raise ValidationError(f"similarity={self.similarity} outside [-1, 1]")
        if self.asr is not None and self.n_poisoned_eval <= 0:
            raise ValidationError("asr reported with no poisoned evaluation samples")
        if self.cacc is not None and self.n_clean_eval <= 0:
            raise ValidationError("cacc reported with no clean evaluation samples")
