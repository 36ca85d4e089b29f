"""Experiment harness: attack, run, and report commands.

Configs are JSON documents with nested sections mirroring the module
configs; unspecified keys fall back to defaults. A run sweeps the
(rate, consistency, seed) grid, producing one report row per cell.
Identical configs produce byte-identical report CSVs: every random
choice is driven by the cell seed and no timestamps enter the CSVs.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import attack as attack_mod
from . import corpus as corpus_mod
from . import defense as defense_mod
from . import metrics as metrics_mod
from . import victim as victim_mod
from .cluster import HdbscanConfig, ReducerConfig, dump_embeddings_csv
from .errors import ConfigError
from .metrics import EvalReport
from .text import Featurizer, Vocabulary, lm_fit, tokenize

DEFAULT_CONFIG = {
    "dataset": {
        "synthetic": {
            "num_classes": 2,
            "samples_per_split": {"train": 2000, "dev": 500, "test": 500},
            "class_keywords": None,  # None -> built-in two-class sentiment-style lists
            "filler_vocab_size": 200,
            "length_range": [14, 16],
            "keyword_rate": 0.9,
            "seed": 0,
        },
        "path": None,
        "format": "tsv",
        "num_classes": None,
    },
    "trigger": {
        "kind": "badnet",
        "badnet_words": list(attack_mod.BADNET_WORDS),
        "insertions_per_sample": 1,
        "addsent_sentence": list(attack_mod.ADDSENT_SENTENCE),
    },
    "poison": {
        "rates": [0.0, 0.01, 0.05, 0.1, 0.2],
        "consistency": ["clean", "mix", "dirty"],
        "target_label": 0,
        "seeds": [1, 2, 3],
    },
    "victim": {
        "hidden_dim": 64,
        "epochs": 20,
        "batch_size": 32,
        "learning_rate": 0.5,
        "l2": 1e-4,
    },
    "features": {"dims": 2**14},
    "lm": {"order": 2, "add_k": 0.1},
    "defense": {
        "name": "none",  # none | cube | bki | onion | strip
        "stage": "train",  # train | inference (onion/strip only)
        "min_cluster_size": 25,
        "min_samples": None,
        "reducer_dim": 10,
        "top_k_keywords": 5,
        "strip_k": 16,
        "strip_replace_frac": 0.5,
        "target_frr": 0.05,
    },
    "metrics": {"stealthiness": True, "oracle": True},
    "output_dir": "runs/bdbench",
}

REPORT_COLUMNS = [
    "attacker", "rate", "consistency", "seed", "defense", "defense_stage",
    "n_train", "n_poisoned_train", "n_poisoned_eval", "n_clean_eval",
    "asr", "cacc", "clean_model_asr", "asr_margin",
    "delta_ppl", "delta_ge_surrogate", "similarity",
    "defense_asr", "defense_cacc", "far", "frr",
    "n_kept", "n_dropped", "poison_recall", "clean_retention",
    "oracle_asr", "oracle_cacc", "status", "config_hash",
]

_INT_COLUMNS = {"seed", "n_train", "n_poisoned_train", "n_poisoned_eval", "n_clean_eval",
                "n_kept", "n_dropped"}
_STR_COLUMNS = {"attacker", "consistency", "defense", "defense_stage", "status", "config_hash"}

# detection runs score poisoned copies and their clean originals together;
# poisoned copies get offset ids so the ground-truth universes stay disjoint
_POISON_ID_OFFSET = 10**9


def _deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if key not in out:
            raise ConfigError(f"unknown config key {key!r}")
        if isinstance(out[key], dict) and isinstance(value, dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = value
    return out


def load_config(path=None, overrides: dict | None = None) -> dict:
    config = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        config = _deep_merge(config, json.loads(Path(path).read_text(encoding="utf-8")))
    if overrides:
        config = _deep_merge(config, overrides)
    if config["dataset"]["synthetic"] and config["dataset"]["synthetic"]["class_keywords"] is None:
        config["dataset"]["synthetic"]["class_keywords"] = [
            list(words) for words in corpus_mod.DEFAULT_CLASS_KEYWORDS]
    return config


def config_hash(config: dict) -> str:
    """Stable hash over everything except the output directory."""
    hashable = {k: v for k, v in config.items() if k != "output_dir"}
    blob = json.dumps(hashable, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def build_dataset(config: dict) -> corpus_mod.Dataset:
    ds_cfg = config["dataset"]
    if ds_cfg.get("path"):
        return corpus_mod.load_dataset(ds_cfg["path"], ds_cfg.get("format", "tsv"),
                                       ds_cfg.get("num_classes"))
    syn = ds_cfg["synthetic"]
    spec = corpus_mod.SyntheticSpec(
        num_classes=syn["num_classes"],
        samples_per_split=dict(syn["samples_per_split"]),
        class_keywords=tuple(tuple(words) for words in syn["class_keywords"]),
        filler_vocab_size=syn["filler_vocab_size"],
        length_range=tuple(syn["length_range"]),
        keyword_rate=syn["keyword_rate"],
        seed=syn["seed"],
    )
    return corpus_mod.generate_synthetic(spec)


def build_trigger(config: dict) -> attack_mod.TriggerSpec:
    t = config["trigger"]
    return attack_mod.TriggerSpec(
        kind=t["kind"],
        badnet_words=tuple(t["badnet_words"]),
        insertions_per_sample=t["insertions_per_sample"],
        addsent_sentence=tuple(t["addsent_sentence"]),
    )


def grid_cells(config: dict) -> list[tuple[float, str, int]]:
    poison = config["poison"]
    return [(rate, consistency, seed)
            for rate in poison["rates"]
            for consistency in poison["consistency"]
            for seed in poison["seeds"]]


def cell_name(rate: float, consistency: str, seed: int) -> str:
    return f"rate{rate:g}_{consistency}_s{seed}"


class _SharedState:
    """Per-dataset artifacts reused across sweep cells."""

    def __init__(self, config: dict):
        self.config = config
        self.dataset = build_dataset(config)
        self.trigger = build_trigger(config)
        self.featurizer = Featurizer(dims=config["features"]["dims"])
        train_tokens = [tokenize(s.text) for s in self.dataset.split("train")]
        self.lm = lm_fit(train_tokens, order=config["lm"]["order"], add_k=config["lm"]["add_k"])
        self.lexicon = {t for tokens in train_tokens for t in tokens}
        self.vocab = Vocabulary.from_corpus(train_tokens)
        self.scorer = metrics_mod.SimilarityScorer(dims=config["features"]["dims"]).fit(train_tokens)
        self._clean_models: dict[int, victim_mod.VictimModel] = {}

    def victim_config(self, seed: int) -> victim_mod.VictimConfig:
        v = self.config["victim"]
        return victim_mod.VictimConfig(hidden_dim=v["hidden_dim"], epochs=v["epochs"],
                                       batch_size=v["batch_size"], learning_rate=v["learning_rate"],
                                       l2=v["l2"], seed=seed)

    def clean_model(self, seed: int) -> victim_mod.VictimModel:
        if seed not in self._clean_models:
            self._clean_models[seed] = victim_mod.train(
                self.dataset.split("train"), self.victim_config(seed),
                featurizer=self.featurizer, num_classes=self.dataset.num_classes)
        return self._clean_models[seed]


def _retrain_on(samples, state: _SharedState, seed: int) -> victim_mod.VictimModel:
    return victim_mod.train(samples, state.victim_config(seed),
                            featurizer=state.featurizer, num_classes=state.dataset.num_classes)


def _strip_threshold(state: _SharedState, model, seed: int) -> float:
    d = state.config["defense"]
    dev = state.dataset.split("dev")
    scores = defense_mod.strip_scores(dev, model, state.vocab, K=d["strip_k"],
                                      replace_frac=d["strip_replace_frac"], seed=seed)
    return defense_mod.calibrate_threshold(list(scores.values()), d["target_frr"], direction="below")


def _onion_threshold(state: _SharedState) -> float:
    token_scores = []
    for s in state.dataset.split("dev"):
        token_scores.extend(defense_mod.onion_suspicion(tokenize(s.text), state.lm))
    return defense_mod.calibrate_threshold(token_scores, state.config["defense"]["target_frr"],
                                           direction="above")


def _onion_corrected(samples, state: _SharedState, threshold: float):
    out = []
    for s in samples:
        corrected = defense_mod.onion_correct(tokenize(s.text), state.lm, threshold)
        out.append(replace(s, text=" ".join(corrected)) if corrected else s)
    return out


def run_cell(state: _SharedState, rate: float, consistency: str, seed: int,
             artifact_dir: Path | None = None) -> tuple[EvalReport, list[str]]:
    """Poison, train, defend (optionally), and evaluate one grid cell."""
    config = state.config
    dataset = state.dataset
    target = config["poison"]["target_label"]
    spec = attack_mod.PoisonSpec(trigger=state.trigger, poison_rate=rate,
                                 consistency=consistency, target_label=target, seed=seed)
    warnings: list[str] = []

    pd = attack_mod.poison(dataset, spec)
    ptest = attack_mod.poison_test_set(dataset, spec)
    warnings.extend(pd.warnings)
    warnings.extend(ptest.warnings)
    eval_samples = ptest.split("test")
    clean_test = dataset.split("test")

    model = victim_mod.train(pd.split("train"), state.victim_config(seed),
                             featurizer=state.featurizer, num_classes=dataset.num_classes)
    clean_model = state.clean_model(seed)

    report = EvalReport(
        attacker=state.trigger.kind, rate=rate, consistency=consistency, seed=seed,
        defense=config["defense"]["name"],
        defense_stage=config["defense"]["stage"] if config["defense"]["name"] != "none" else "",
        n_train=len(pd.split("train")), n_poisoned_train=len(pd.mask),
        n_poisoned_eval=len(eval_samples), n_clean_eval=len(clean_test),
        status="ok",
        config_echo={"spec": attack_mod.spec_to_dict(spec), "victim": config["victim"],
                     "defense": config["defense"], "features": config["features"]},
    )

    report.cacc = metrics_mod.cacc(model, clean_test)
    if eval_samples:
        report.asr = metrics_mod.asr(model, eval_samples, target)
        report.clean_model_asr = metrics_mod.asr(clean_model, eval_samples, target)
        report.asr_margin = report.asr - report.clean_model_asr

    if config["metrics"]["stealthiness"] and eval_samples:
        clean_texts = [ptest.clean_texts[s.id] for s in eval_samples]
        poisoned_texts = [s.text for s in eval_samples]
        report.delta_ppl = metrics_mod.delta_ppl(clean_texts, poisoned_texts, state.lm)
        report.delta_ge_surrogate = metrics_mod.delta_ge(clean_texts, poisoned_texts, state.lexicon)
        report.similarity = metrics_mod.mean_similarity(state.scorer, clean_texts, poisoned_texts)

    if config["metrics"]["oracle"]:
        oracle_train = [s for s in pd.split("train") if s.id not in pd.mask]
        oracle_model = _retrain_on(oracle_train, state, seed)
        if eval_samples:
            report.oracle_asr = metrics_mod.asr(oracle_model, eval_samples, target)
        report.oracle_cacc = metrics_mod.cacc(oracle_model, clean_test)

    d = config["defense"]
    name, stage = d["name"], d["stage"]
    if name != "none":
        if name in ("cube", "bki") and stage != "train":
            raise ConfigError(f"{name} is a training-time defense; stage must be 'train'")
        filter_result = None
        if name == "cube":
            filter_result = defense_mod.cube_filter(
                pd, state.victim_config(seed),
                reducer_config=ReducerConfig(target_dim=d["reducer_dim"]),
                hdbscan_config=HdbscanConfig(min_cluster_size=d["min_cluster_size"],
                                             min_samples=d["min_samples"]),
                featurizer=state.featurizer)
            if artifact_dir is not None:
                ids = [s.id for s in pd.split("train")]
                emb = np.array([filter_result.diagnostics[i]["embedding"] for i in ids])
                labs = [filter_result.diagnostics[i]["cluster"] for i in ids]
                dump_embeddings_csv(artifact_dir / "embeddings.csv", ids, emb, labs)
        elif name == "bki":
            filter_result = defense_mod.bki_filter(pd, model, top_k_keywords=d["top_k_keywords"])
        elif name == "strip" and stage == "train":
            threshold = _strip_threshold(state, model, seed)
            scores = defense_mod.strip_scores(pd.split("train"), model, state.vocab,
                                              K=d["strip_k"], replace_frac=d["strip_replace_frac"],
                                              seed=seed)
            kept = tuple(s.id for s in pd.split("train") if scores[s.id] >= threshold)
            dropped = tuple(s.id for s in pd.split("train") if scores[s.id] < threshold)
            filter_result = defense_mod.FilterResult(kept=kept, dropped=dropped,
                                                     diagnostics={"threshold": threshold})
        elif name == "onion" and stage == "train":
            threshold = _onion_threshold(state)
            corrected = _onion_corrected(pd.split("train"), state, threshold)
            defended = _retrain_on(corrected, state, seed)
            if eval_samples:
                report.defense_asr = metrics_mod.asr(defended, eval_samples, target)
            report.defense_cacc = metrics_mod.cacc(defended, clean_test)
            report.n_kept = len(corrected)
            report.n_dropped = 0
        elif name == "strip" and stage == "inference":
            threshold = _strip_threshold(state, model, seed)
            verdicts = []

            def detector(sample):
                return defense_mod.strip_detect(sample, model, state.vocab, K=d["strip_k"],
                                                replace_frac=d["strip_replace_frac"],
                                                threshold=threshold, seed=seed)

            for s in eval_samples:
                v = detector(replace(s, id=s.id + _POISON_ID_OFFSET))
                verdicts.append(v)
            for s in clean_test:
                verdicts.append(detector(s))
            if eval_samples:
                report.far, report.frr = metrics_mod.far_frr(
                    verdicts, {s.id + _POISON_ID_OFFSET for s in eval_samples})
                report.defense_asr = metrics_mod.asr_under_detection(model, detector,
                                                                     eval_samples, target)
            report.defense_cacc = metrics_mod.cacc_under_detection(model, detector, clean_test)
            if artifact_dir is not None:
                defense_mod.write_verdicts_csv(verdicts, artifact_dir / "verdicts.csv")
        elif name == "onion" and stage == "inference":
            threshold = _onion_threshold(state)
            corrected_eval = _onion_corrected(eval_samples, state, threshold)
            corrected_clean = _onion_corrected(clean_test, state, threshold)
            if corrected_eval:
                report.defense_asr = metrics_mod.asr(model, corrected_eval, target)
            report.defense_cacc = metrics_mod.cacc(model, corrected_clean)
        else:
            raise ConfigError(f"unknown defense {name!r} at stage {stage!r}")

        if filter_result is not None:
            warnings.extend(filter_result.warnings)
            if artifact_dir is not None:
                defense_mod.write_filter_csv(filter_result, artifact_dir / "filter.csv")
            kept_ids = set(filter_result.kept)
            filtered = [s for s in pd.split("train") if s.id in kept_ids]
            defended = _retrain_on(filtered, state, seed)
            if eval_samples:
                report.defense_asr = metrics_mod.asr(defended, eval_samples, target)
            report.defense_cacc = metrics_mod.cacc(defended, clean_test)
            report.n_kept = len(filter_result.kept)
            report.n_dropped = len(filter_result.dropped)
            if pd.mask:
                dropped_ids = set(filter_result.dropped)
                report.poison_recall = len(pd.mask & dropped_ids) / len(pd.mask)
            n_clean_train = report.n_train - len(pd.mask)
            if n_clean_train:
                clean_kept = sum(1 for s in pd.split("train")
                                 if s.id in kept_ids and s.id not in pd.mask)
                report.clean_retention = clean_kept / n_clean_train

    report.validate()
    return report, warnings


def _format_cell_value(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(float(value))  # shortest lossless form, also for np.float64
    return str(value)


def write_report_csv(path, reports, cfg_hash: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(REPORT_COLUMNS)
        for rep in reports:
            row = []
            for col in REPORT_COLUMNS:
                value = cfg_hash if col == "config_hash" else getattr(rep, col)
                row.append(_format_cell_value(value))
            writer.writerow(row)


def read_report_csv(path) -> list[dict]:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for raw in csv.DictReader(fh):
            row: dict = {}
            for key, value in raw.items():
                if value == "":
                    row[key] = None
                elif key in _STR_COLUMNS:
                    row[key] = value
                elif key in _INT_COLUMNS:
                    row[key] = int(value)
                else:
                    row[key] = float(value)
            rows.append(row)
    return rows


def cmd_attack(config: dict, only_cell: tuple | None = None) -> int:
    """Write poisoned dataset files plus ground-truth manifests."""
    out_root = Path(config["output_dir"]) / "attack"
    dataset = build_dataset(config)
    trigger = build_trigger(config)
    target = config["poison"]["target_label"]
    for rate, consistency, seed in grid_cells(config):
        if only_cell is not None and (rate, consistency, seed) != only_cell:
            continue
        spec = attack_mod.PoisonSpec(trigger=trigger, poison_rate=rate,
                                     consistency=consistency, target_label=target, seed=seed)
        pd = attack_mod.poison(dataset, spec)
        ptest = attack_mod.poison_test_set(dataset, spec)
        cell_dir = out_root / cell_name(rate, consistency, seed)
        for split, samples in pd.splits.items():
            corpus_mod.write_split(samples, cell_dir / f"{split}.tsv", "tsv")
        corpus_mod.write_split(ptest.split("test"), cell_dir / "poisoned_test.tsv", "tsv")
        attack_mod.write_manifest(pd, cell_dir / "manifest.json")
        attack_mod.write_manifest(ptest, cell_dir / "test_manifest.json")
        print(f"{cell_name(rate, consistency, seed)}: poisoned {len(pd.mask)} of "
              f"{len(pd.split('train'))} train samples, {len(ptest.split('test'))} eval samples")
    return 0


def cmd_run(config: dict, only_cell: tuple | None = None) -> int:
    """Sweep the grid: poison, train, defend, evaluate; write report.csv."""
    out_root = Path(config["output_dir"])
    out_root.mkdir(parents=True, exist_ok=True)
    cfg_hash = config_hash(config)
    state = _SharedState(config)
    t0 = time.monotonic()
    reports, record_cells, all_ok = [], [], True
    for rate, consistency, seed in grid_cells(config):
        if only_cell is not None and (rate, consistency, seed) != only_cell:
            continue
        name = cell_name(rate, consistency, seed)
        artifact_dir = out_root / "cells" / name
        try:
            report, cell_warnings = run_cell(state, rate, consistency, seed, artifact_dir)
        except Exception as exc:  # record and continue with the sweep
            all_ok = False
            report = EvalReport(attacker=state.trigger.kind, rate=rate,
                                consistency=consistency, seed=seed,
                                defense=config["defense"]["name"],
                                status=f"failed:{type(exc).__name__}")
            cell_warnings = [f"{name}: {exc}"]
            print(f"{name}: FAILED ({exc})", file=sys.stderr)
        else:
            summary = f"asr={report.asr:.3f}" if report.asr is not None else "asr=n/a"
            print(f"{name}: {summary} cacc={report.cacc:.3f}")
        reports.append(report)
        record_cells.append({"cell": name, "report": _report_to_dict(report),
                             "warnings": cell_warnings})

    write_report_csv(out_root / "report.csv", reports, cfg_hash)
    record = {
        "config_hash": cfg_hash,
        "config": config,
        "cells": record_cells,
        "wall_clock_s": time.monotonic() - t0,
    }
    (out_root / "run_record.json").write_text(json.dumps(record, indent=1, sort_keys=True),
                                              encoding="utf-8")
    return 0 if all_ok else 1


def _report_to_dict(report: EvalReport) -> dict:
    out = {}
    for col in REPORT_COLUMNS:
        if col == "config_hash":
            continue
        out[col] = getattr(report, col)
    out["config_echo"] = report.config_echo
    return out


def _mean_sd(values):
    values = sorted(v for v in values if v is not None)  # order-invariant aggregation
    if not values:
        return None, None
    mean = float(np.mean(values))
    sd = float(np.std(values, ddof=1)) if len(values) > 1 else 0.0
    return mean, sd


AGGREGATE_COLUMNS = ["attacker", "defense", "consistency", "rate", "n_seeds",
                     "asr_mean", "asr_sd", "cacc_mean", "cacc_sd",
                     "clean_model_asr_mean", "defense_asr_mean", "defense_asr_sd",
                     "defense_cacc_mean", "defense_cacc_sd", "oracle_asr_mean"]


def cmd_report(run_dir, out_dir=None) -> int:
    """Aggregate report rows into per-consistency mean/sd series over seeds."""
    run_dir = Path(run_dir)
    report_path = run_dir / "report.csv"
    if not report_path.exists():
        raise ConfigError(f"{run_dir}: no report.csv (run `bdbench run` first)")
    rows = read_report_csv(report_path)
    if not rows:
        raise ConfigError(f"{report_path}: empty report")
    out_dir = Path(out_dir) if out_dir else run_dir / "report"
    out_dir.mkdir(parents=True, exist_ok=True)

    groups: dict = {}
    for row in rows:
        key = (row["attacker"], row["defense"], row["consistency"], row["rate"])
        groups.setdefault(key, []).append(row)

    with open(out_dir / "aggregate.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(AGGREGATE_COLUMNS)
        for key in sorted(groups):
            cells = groups[key]
            attacker, defense, consistency, rate = key
            asr_m, asr_s = _mean_sd([c["asr"] for c in cells])
            cacc_m, cacc_s = _mean_sd([c["cacc"] for c in cells])
            cm_m, _ = _mean_sd([c["clean_model_asr"] for c in cells])
            dasr_m, dasr_s = _mean_sd([c["defense_asr"] for c in cells])
            dcacc_m, dcacc_s = _mean_sd([c["defense_cacc"] for c in cells])
            oasr_m, _ = _mean_sd([c["oracle_asr"] for c in cells])
            writer.writerow([_format_cell_value(v) for v in [
                attacker, defense, consistency, rate, len(cells),
                asr_m, asr_s, cacc_m, cacc_s, cm_m, dasr_m, dasr_s,
                dcacc_m, dcacc_s, oasr_m]])

    cells_dir = run_dir / "cells"
    if cells_dir.exists():
        for emb in sorted(cells_dir.glob("*/embeddings.csv")):
            target = out_dir / f"embeddings_{emb.parent.name}.csv"
            target.write_bytes(emb.read_bytes())
    print(f"wrote {out_dir / 'aggregate.csv'}")
    return 0


def _parse_cell(text: str) -> tuple:
    parts = text.split(",")
    if len(parts) != 3:
        raise ConfigError("--cell expects rate,consistency,seed")
    return float(parts[0]), parts[1], int(parts[2])


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="bdbench",
                                     description="Poisoning attack/defense benchmark harness")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("attack", "run"):
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, default=None, help="JSON config path")
        p.add_argument("--out", type=Path, default=None, help="override output_dir")
        p.add_argument("--seed-override", type=int, default=None,
                       help="replace the seed sweep with a single seed")
        p.add_argument("--cell", type=str, default=None,
                       help="run a single cell: rate,consistency,seed")
    p = sub.add_parser("report")
    p.add_argument("run_dir", type=Path)
    p.add_argument("--out", type=Path, default=None)

    args = parser.parse_args(argv)
    if args.command == "report":
        return cmd_report(args.run_dir, args.out)

    config = load_config(args.config)
    if args.out is not None:
        config["output_dir"] = str(args.out)
    if args.seed_override is not None:
        config["poison"]["seeds"] = [args.seed_override]
    only_cell = _parse_cell(args.cell) if args.cell else None
    if args.command == "attack":
        return cmd_attack(config, only_cell)
    return cmd_run(config, only_cell)


if __name__ == "__main__":
    sys.exit(main())
