import numpy as np
import pytest

from bdbench.corpus import TextSample
from bdbench.defense import DetectionVerdict
from bdbench.errors import UndefinedMetricError, ValidationError
from bdbench.metrics import (EvalReport, SimilarityScorer, asr, asr_margin,
                             asr_under_detection, cacc, cacc_under_detection,
                             delta_ge, delta_ppl, far_frr, mean_similarity,
                             similarity)
from bdbench.text import lm_fit, tokenize


class FakeModel:
    """Predicts a fixed class per text (defaults to 0)."""

    def __init__(self, mapping=None, default=0):
        self.mapping = mapping or {}
        self.default = default

    def predict(self, text):
        return self.mapping.get(text, self.default)

    def predict_batch(self, texts):
        return np.array([self.predict(t) for t in texts])


def mk_samples(labels, prefix="s"):
    return [TextSample(id=i, text=f"{prefix}{i}", label=lab, poisoned=True,
                       original_label=1 - lab if lab == 0 else lab)
            for i, lab in enumerate(labels)]


def test_asr_all_hit():
    samples = mk_samples([0, 0, 0, 0])
    assert asr(FakeModel(default=0), samples, 0) == 1.0


def test_asr_three_of_four():
    samples = mk_samples([0, 0, 0, 0])
    model = FakeModel({"s0": 0, "s1": 0, "s2": 0, "s3": 1})
    assert asr(model, samples, 0) == 0.75


def test_asr_empty_errors():
    with pytest.raises(UndefinedMetricError):
        asr(FakeModel(), [], 0)


def test_cacc_examples():
    samples = [TextSample(id=i, text=f"t{i}", label=i % 2) for i in range(10)]
    perfect = FakeModel({f"t{i}": i % 2 for i in range(10)})
    assert cacc(perfect, samples) == 1.0
    constant = FakeModel(default=0)
    assert cacc(constant, samples) == 0.5


def test_asr_margin_zero_for_identical_models():
    samples = mk_samples([0, 0])
    m = FakeModel(default=0)
    assert asr_margin(m, m, samples, 0) == 0.0


def test_asr_margin_bounds():
    samples = mk_samples([0] * 10)
    hot = FakeModel(default=0)
    cold = FakeModel(default=1)
    assert asr_margin(hot, cold, samples, 0) == 1.0
    assert asr_margin(cold, hot, samples, 0) == -1.0


def test_delta_ppl_identical_zero(clean_lm):
    texts = ["superb vivid movie", "awful boring stale"]
    assert delta_ppl(texts, texts, clean_lm) == 0.0


def test_delta_ppl_positive_for_badnet(clean_lm, badnet_eval_set):
    samples = list(badnet_eval_set.split("test"))[:100]
    clean = [badnet_eval_set.clean_texts[s.id] for s in samples]
    poisoned = [s.text for s in samples]
    assert delta_ppl(clean, poisoned, clean_lm) > 0


def test_delta_ppl_pair_order_invariant(clean_lm):
    clean = ["superb vivid", "awful stale", "tender witty"]
    poisoned = ["superb cf vivid", "awful stale mn", "bb tender witty"]
    d1 = delta_ppl(clean, poisoned, clean_lm)
    d2 = delta_ppl(clean[::-1], poisoned[::-1], clean_lm)
    assert d1 == pytest.approx(d2, rel=1e-12)


def test_delta_ppl_length_mismatch():
    lm = lm_fit([["a"]], order=2, add_k=1.0)
    with pytest.raises(ValidationError):
        delta_ppl(["a"], [], lm)


def test_delta_ge_examples():
    lexicon = {"good", "movie", "i", "watch", "this", "3d"}
    assert delta_ge(["good movie"], ["good movie"], lexicon) == 0.0
    assert delta_ge(["good movie"], ["good cf movie"], lexicon) == 1.0
    # sentence trigger built from in-lexicon words adds no surrogate errors
    assert delta_ge(["good movie"], ["good i watch this 3d movie"], lexicon) == 0.0


def test_similarity_identical_is_exactly_one(fixture_dataset):
    scorer = SimilarityScorer(dims=256).fit(
        tokenize(s.text) for s in fixture_dataset.split("train")[:200])
    assert scorer.similarity("superb vivid movie", "superb vivid movie") == 1.0


def test_similarity_disjoint_is_zero(fixture_dataset):
    scorer = SimilarityScorer(dims=2**12).fit(
        tokenize(s.text) for s in fixture_dataset.split("train")[:200])
    assert similarity(scorer, "superb vivid dazzling", "awful boring stale") == 0.0


def test_similarity_insertion_beats_rewrite(fixture_dataset):
    scorer = SimilarityScorer().fit(tokenize(s.text) for s in fixture_dataset.split("train"))
    base = fixture_dataset.split("test")[0].text
    inserted = " ".join(["cf"] + base.split())
    rewrite = " ".join("zz%d" % i for i in range(len(base.split())))
    assert scorer.similarity(base, inserted) > scorer.similarity(base, rewrite)


def test_similarity_empty_pair_zero(fixture_dataset):
    scorer = SimilarityScorer(dims=64).fit([["a"]])
    assert scorer.similarity("", "whatever") == 0.0


def verdicts_from(flags):
    return [DetectionVerdict(sample_id=i, score=0.0, flagged=f, threshold=0.0)
            for i, f in enumerate(flags)]


def test_far_frr_hand_example():
    # 10 poisoned (8 flagged), 20 clean (1 flagged)
    flags = [True] * 8 + [False] * 2 + [True] + [False] * 19
    verdicts = verdicts_from(flags)
    poisoned_ids = set(range(10))
    far, frr = far_frr(verdicts, poisoned_ids)
    assert far == 0.2
    assert frr == 0.05


def test_far_frr_perfect_and_flag_everything():
    flags_perfect = [True] * 5 + [False] * 5
    assert far_frr(verdicts_from(flags_perfect), set(range(5))) == (0.0, 0.0)
    flags_all = [True] * 10
    assert far_frr(verdicts_from(flags_all), set(range(5))) == (0.0, 1.0)


def test_far_frr_undefined_and_unknown_ids():
    with pytest.raises(UndefinedMetricError):
        far_frr(verdicts_from([True, False]), set())
    with pytest.raises(UndefinedMetricError):
        far_frr(verdicts_from([True, True]), {0, 1})
    with pytest.raises(ValidationError):
        far_frr(verdicts_from([True, False]), {0}, clean_ids={5})


def mk_detector(flagged_ids):
    def detector(sample):
        return DetectionVerdict(sample_id=sample.id, score=0.0,
                                flagged=sample.id in flagged_ids, threshold=0.0)
    return detector


def test_asr_under_detection_examples():
    samples = mk_samples([0] * 10)
    model = FakeModel(default=0)
    assert asr_under_detection(model, mk_detector(set(range(10))), samples, 0) == 0.0
    assert asr_under_detection(model, mk_detector(set()), samples, 0) == asr(model, samples, 0)
    # 10 samples, 6 pass detection, 5 of those hit the target
    flagged = {6, 7, 8, 9}
    model = FakeModel({f"s{i}": 0 for i in range(5)}, default=1)
    assert asr_under_detection(model, mk_detector(flagged), samples, 0) == 0.5


def test_cacc_under_detection_examples():
    samples = [TextSample(id=i, text=f"t{i}", label=i % 2) for i in range(20)]
    right = FakeModel({f"t{i}": i % 2 for i in range(20)})
    assert cacc_under_detection(right, mk_detector(set()), samples) == cacc(right, samples)
    assert cacc_under_detection(right, mk_detector(set(range(20))), samples) == 0.0
    # 18 unflagged, 17 of those correct
    model = FakeModel({f"t{i}": i % 2 for i in range(19)}, default=0)
    got = cacc_under_detection(model, mk_detector({17, 18}), samples)
    assert got == 0.85
    assert got <= cacc(model, samples)


def test_mean_similarity_requires_pairs(fixture_dataset):
    scorer = SimilarityScorer(dims=64).fit([["a"]])
    with pytest.raises(UndefinedMetricError):
        mean_similarity(scorer, [], [])


def test_eval_report_validation():
    rep = EvalReport(attacker="badnet", rate=0.1, consistency="mix", seed=1,
                     n_poisoned_eval=10, n_clean_eval=10, asr=0.5, cacc=1.0)
    rep.validate()
    rep.asr = 1.5
    with pytest.raises(ValidationError):
        rep.validate()
    rep.asr = 0.5
    rep.similarity = -2.0
    with pytest.raises(ValidationError):
        rep.validate()
    bad = EvalReport(attacker="badnet", rate=0.1, consistency="mix", seed=1,
                     n_poisoned_eval=0, asr=0.5)
    with pytest.raises(ValidationError):
        bad.validate()


def test_far_plus_recall_is_one():
    rng = np.random.default_rng(0)
    flags = rng.random(40) < 0.4
    verdicts = verdicts_from(flags.tolist())
    poisoned_ids = set(range(15))
    far, _ = far_frr(verdicts, poisoned_ids)
    recall = sum(1 for v in verdicts if v.sample_id in poisoned_ids and v.flagged) / 15
    assert far + recall == 1.0
