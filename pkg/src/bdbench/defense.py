"""Four defenses against poisoned training data and triggered inputs.

Training-time filters (the clustering pipeline and the salient-keyword
inspector) partition the train split into kept/dropped ids; the
perplexity corrector and the perturbation-entropy detector act per
sample. All defenses are read-only over their inputs.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import victim as victim_mod
from .cluster import (NOISE, HdbscanConfig, ReducerConfig, effective_rank, hdbscan,
                      pca_fit_transform)
from .errors import ConfigError, ValidationError
from .text import NGramLM, Vocabulary, tokenize

BKI_TOP_SAMPLE_SCORES = 5  # per-word mean is over this many largest scores


@dataclass(frozen=True)
class FilterResult:
    """Partition of the train ids into kept and dropped, with diagnostics."""

    kept: tuple[int, ...]
    dropped: tuple[int, ...]
    diagnostics: dict = field(default_factory=dict)
    warnings: tuple[str, ...] = ()

    def __post_init__(self):
        overlap = set(self.kept) & set(self.dropped)
        if overlap:
            raise ValidationError(f"kept and dropped overlap: {sorted(overlap)[:5]}")


@dataclass(frozen=True)
class DetectionVerdict:
    sample_id: int
    score: float
    flagged: bool
    threshold: float
    direction: str = "below"  # flagged when score < threshold
    note: str = ""


def cube_filter(poisoned_train, victim_config, reducer_config: ReducerConfig | None = None,
                hdbscan_config: HdbscanConfig | None = None, featurizer=None) -> FilterResult:
    """Cluster-and-keep-the-majority training-set filter.

    Trains a diagnostic model on the suspect split as-is, embeds every
    train sample with its hidden layer, reduces to reducer_config.target_dim,
    density-clusters, and keeps only the largest cluster per observed label.
    Noise points are dropped; size ties break toward the lower cluster id.
    If clustering returns all noise the filter refuses to act and keeps
    everything, with a warning.
    """
    reducer_config = reducer_config or ReducerConfig()
    hdbscan_config = hdbscan_config or HdbscanConfig()
    if victim_config.hidden_dim < reducer_config.target_dim:
        raise ConfigError(
            f"hidden_dim {victim_config.hidden_dim} < reducer target_dim {reducer_config.target_dim}"
        )
    samples = list(poisoned_train.split("train"))
    model = victim_mod.train(samples, victim_config, featurizer=featurizer,
                             num_classes=poisoned_train.num_classes)
    reps = model.represent_batch([s.text for s in samples])
    warnings = []
    dim = min(reducer_config.target_dim, effective_rank(reps))
    if dim < reducer_config.target_dim:
        warnings.append(f"representations have rank {dim}; reduced to {dim}-D "
                        f"instead of {reducer_config.target_dim}-D")
    if dim == 0:
        return FilterResult(
            kept=tuple(s.id for s in samples), dropped=(),
            diagnostics={s.id: {"cluster": NOISE, "embedding": []} for s in samples},
            warnings=tuple(warnings) + ("degenerate representations; keeping everything",),
        )
    _, Y = pca_fit_transform(reps, dim)
    assign = hdbscan(Y, hdbscan_config)

    diagnostics = {
        s.id: {"cluster": int(assign.labels[i]), "embedding": [float(v) for v in Y[i]]}
        for i, s in enumerate(samples)
    }
    if assign.num_clusters == 0:
        return FilterResult(
            kept=tuple(s.id for s in samples),
            dropped=(),
            diagnostics=diagnostics,
            warnings=tuple(warnings)
            + ("clustering returned all noise; filtering refused, keeping everything",),
        )

    kept, dropped = [], []
    for label in range(poisoned_train.num_classes):
        idx = [i for i, s in enumerate(samples) if s.label == label]
        if not idx:
            continue
        counts: dict[int, int] = {}
        for i in idx:
            c = int(assign.labels[i])
            if c != NOISE:
                counts[c] = counts.get(c, 0) + 1
        if counts:
            best = max(sorted(counts), key=lambda c: counts[c])  # ties -> lower id
            for i in idx:
                (kept if int(assign.labels[i]) == best else dropped).append(samples[i].id)
        else:
            dropped.extend(samples[i].id for i in idx)
    return FilterResult(kept=tuple(sorted(kept)), dropped=tuple(sorted(dropped)),
                        diagnostics=diagnostics, warnings=tuple(warnings))


def bki_filter(poisoned_train, trained_victim, top_k_keywords: int = 5) -> FilterResult:
    """Salient-keyword training-set filter.

    Scores each word by how much deleting its occurrences moves the
    victim's hidden representation (L2), aggregates per word as the mean
    of its BKI_TOP_SAMPLE_SCORES largest sample scores weighted by
    log(1 + document frequency), and drops every sample containing one of
    the top_k_keywords. Words with zero score are never keywords.
    """
    samples = list(poisoned_train.split("train"))
    warnings = []
    word_scores: dict[str, list[float]] = {}
    word_df: dict[str, int] = {}

    texts, spans = [], []
    for s in samples:
        tokens = tokenize(s.text)
        if not tokens:
            warnings.append(f"sample {s.id}: empty text skipped")
            continue
        distinct = sorted(set(tokens))
        for w in distinct:
            word_df[w] = word_df.get(w, 0) + 1
        start = len(texts)
        texts.append(" ".join(tokens))
        for w in distinct:
            texts.append(" ".join(t for t in tokens if t != w))
        spans.append((start, distinct))

    reps = np.zeros((0, trained_victim.hidden_dim))
    if texts:
        chunks = [trained_victim.represent_batch(texts[i : i + 1024])
                  for i in range(0, len(texts), 1024)]
        reps = np.vstack(chunks)
    for start, distinct in spans:
        base = reps[start]
        for j, w in enumerate(distinct, start=1):
            delta = reps[start + j] - base
            word_scores.setdefault(w, []).append(float(np.sqrt(np.dot(delta, delta))))

    corpus_scores = {}
    for w, scores in word_scores.items():
        top = sorted(scores, reverse=True)[:BKI_TOP_SAMPLE_SCORES]
        corpus_scores[w] = (sum(top) / len(top)) * math.log(1.0 + word_df[w])
    ranked = sorted((w for w in corpus_scores if corpus_scores[w] > 0.0),
                    key=lambda w: (-corpus_scores[w], w))
    keywords = set(ranked[:top_k_keywords])

    kept, dropped = [], []
    diagnostics: dict = {
        "keywords": sorted(keywords),
        "keyword_scores": {w: corpus_scores[w] for w in keywords},
    }
    for s in samples:
        hits = keywords & set(tokenize(s.text))
        diagnostics[s.id] = {"keyword_hits": sorted(hits)}
        if hits:
            dropped.append(s.id)
        else:
            kept.append(s.id)
    return FilterResult(kept=tuple(kept), dropped=tuple(dropped),
                        diagnostics=diagnostics, warnings=tuple(warnings))


def onion_suspicion(tokens, lm: NGramLM) -> list[float]:
    """Per-token suspicion: perplexity drop when that token is deleted."""
    base = lm.perplexity(tokens)
    return [base - lm.perplexity(tokens[:i] + tokens[i + 1 :]) for i in range(len(tokens))]


def onion_correct(tokens, lm: NGramLM, threshold: float) -> list[str]:
    """Greedily delete the most perplexity-inflating tokens.

    Rescored after every removal; stops when the top score falls to the
    threshold or ceil(20%) of the original tokens have been removed.
    """
    out = list(tokens)
    cap = math.ceil(0.2 * len(out))
    removed = 0
    while out and removed < cap:
        scores = onion_suspicion(out, lm)
        i = int(np.argmax(scores))
        if scores[i] > threshold:
            out.pop(i)
            removed += 1
        else:
            break
    return out


def strip_perturb(tokens, vocab: Vocabulary, replace_frac: float, rng) -> list[str]:
    """Replace a fraction of token positions with uniform vocabulary words."""
    out = list(tokens)
    n_replace = int(round(replace_frac * len(out)))
    words = vocab.words()
    if n_replace and words:
        positions = rng.choice(len(out), size=n_replace, replace=False)
        for pos in positions:
            out[int(pos)] = words[int(rng.integers(len(words)))]
    return out


def strip_scores(samples, victim, vocab: Vocabulary, K: int = 16,
                 replace_frac: float = 0.5, seed: int = 0) -> dict[int, float]:
    """Mean prediction entropy over K perturbed copies, per sample id.

    Low entropy means the prediction survives heavy perturbation, the
    signature of a trigger dominating the input. Empty texts get +inf
    (never flagged).
    """
    if K < 8:
        raise ConfigError(f"K must be >= 8, got {K}")
    rng = np.random.default_rng(seed)
    scores: dict[int, float] = {}
    copies, owners = [], []
    for s in samples:
        tokens = tokenize(s.text)
        if not tokens:
            scores[s.id] = math.inf
            continue
        for _ in range(K):
            copies.append(" ".join(strip_perturb(tokens, vocab, replace_frac, rng)))
            owners.append(s.id)
    if copies:
        probs = victim.predict_proba_batch(copies)
        # x log x with the 0 log 0 = 0 convention; extreme logits can
        # underflow a probability to exactly zero
        safe = np.where(probs > 0.0, probs, 1.0)
        ent = -np.sum(probs * np.log(safe), axis=1)
        acc: dict[int, list[float]] = {}
        for sid, e in zip(owners, ent):
            acc.setdefault(sid, []).append(float(e))
        for sid, es in acc.items():
            scores[sid] = float(np.mean(es))
    return scores


def strip_detect(sample, victim, vocab: Vocabulary, K: int = 16, replace_frac: float = 0.5,
                 threshold: float = 0.0, seed: int = 0) -> DetectionVerdict:
    """Entropy-based single-sample detection; flagged when score < threshold."""
    score = strip_scores([sample], victim, vocab, K=K, replace_frac=replace_frac, seed=seed)[sample.id]
    note = "empty text: unflaggable" if math.isinf(score) else ""
    return DetectionVerdict(sample_id=sample.id, score=score, flagged=bool(score < threshold),
                            threshold=threshold, direction="below", note=note)


def write_filter_csv(result: FilterResult, path) -> None:
    """One row per train sample: id, kept flag, and its diagnostic note."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    kept = set(result.kept)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "kept", "diagnostics"])
        for sid in sorted(kept) + sorted(result.dropped):
            diag = result.diagnostics.get(sid, "")
            writer.writerow([sid, int(sid in kept), repr(diag) if diag else ""])


def write_verdicts_csv(verdicts, path) -> None:
    """One row per detection verdict: id, score, flagged, threshold."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "score", "flagged", "threshold", "direction", "note"])
        for v in verdicts:
            writer.writerow([v.sample_id, repr(float(v.score)), int(v.flagged),
                             repr(float(v.threshold)), v.direction, v.note])


def calibrate_threshold(scores_on_clean, target_frr: float, direction: str = "below") -> float:
    """Quantile threshold so the calibration FRR is about target_frr.

    Linear-interpolation quantile; direction says which side of the
    threshold is flagged ('below' for entropy scores, 'above' for
    suspicion scores).
    """
    if not 0.0 < target_frr <= 0.5:
        raise ConfigError(f"target_frr must be in (0, 0.5], got {target_frr}")
    scores = np.asarray(list(scores_on_clean), dtype=np.float64)
    if scores.size < 20:
        raise ValidationError(f"need at least 20 clean scores, got {scores.size}")
    if direction == "below":
        return float(np.quantile(scores, target_frr))
    if direction == "above":
        return float(np.quantile(scores, 1.0 - target_frr))
    raise ConfigError(f"direction must be 'below' or 'above', got {direction!r}")
