"""End-to-end glue: recordings -> feature sequences -> fold banks -> report."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

import numpy as np
from scipy.stats import binomtest

from .echosim import GESTURES, DatasetConfig, Recording, dataset_entries, render_entry
from .hmm import ClassifierBank, classify, no_finger_weighted_priors, train_bank
from .params import FrameParams
from .rdproc import FrameProcessor
from .symbolizer import SymbolDictionary, build_dictionary, symbolize
from .tracker import FeatureTracker, FeatureVector, TrackerConfig


@dataclass(frozen=True)
class TrainConfig:
    hidden_states: int = 6
    iterations: int = 10
    smoothing: float = 1e-3
    seed: int = 0
    prior: str = "uniform"          # or "no-finger-weighted"
    left_to_right: bool = True

    def __post_init__(self):
        if self.prior not in ("uniform", "no-finger-weighted"):
            raise ValueError(f"unknown prior preset {self.prior!r}")
        if self.hidden_states < 1 or self.iterations < 0 or self.smoothing <= 0:
            raise ValueError("hidden_states >= 1, iterations >= 0 and smoothing > 0 required")

    def priors(self, classes) -> Optional[np.ndarray]:
        if self.prior == "uniform":
            return None
        if self.prior == "no-finger-weighted":
            return no_finger_weighted_priors(classes)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown training options: {sorted(unknown)}")
        return cls(**d)


def recording_features(rec: Recording, tracker_cfg: Optional[TrackerConfig] = None,
                       processor: Optional[FrameProcessor] = None) -> list[FeatureVector]:
    """Process and track one recording frame by frame without keeping the cube."""
    proc = processor or FrameProcessor(rec.params)
    ft = FeatureTracker(rec.params, tracker_cfg)
    return [ft.update(proc(fr, i)) for i, fr in enumerate(rec.frames)]


def extract_dataset(cfg: DatasetConfig, tracker_cfg: Optional[TrackerConfig] = None,
                    progress: Optional[Callable[[int, int], None]] = None) -> list[dict]:
    """Render and featurize every recording of a dataset config in memory.

    Returns manifest entries extended with ``features`` and ``frames``.
    """
    entries = dataset_entries(cfg)
    proc = FrameProcessor(cfg.params)
    out = []
    for i, e in enumerate(entries):
        rec = render_entry(e, cfg)
        item = dict(e)
        item["features"] = recording_features(rec, tracker_cfg, proc)
        item["frames"] = len(rec)
        out.append(item)
        if progress:
            progress(i + 1, len(entries))
    return out


def train_fold(items: list[dict], held_out: int, train_cfg: TrainConfig,
               classes=GESTURES) -> tuple[ClassifierBank, SymbolDictionary]:
    """Dictionary and one HMM per class from every subject except ``held_out``."""
    train = [it for it in items if it["subject"] != held_out]
    dictionary = build_dictionary([(it["path"], it["features"]) for it in train])
    by_class = {c: [] for c in classes}
    for it in sorted(train, key=lambda it: it["path"]):
        by_class[it["label"]].append(symbolize(it["features"], dictionary).symbols)
    bank = train_bank(by_class, classes, K=train_cfg.hidden_states, iterations=train_cfg.iterations,
                      smoothing=train_cfg.smoothing, rng_seed=train_cfg.seed,
                      priors=train_cfg.priors(classes), alphabet_size=dictionary.alphabet_size,
                      dictionary_hash=dictionary.hash, left_to_right=train_cfg.left_to_right,
                      meta={"held_out_subject": held_out})
    return bank, dictionary


def wilson_interval(k: int, n: int) -> tuple[float, float]:
    """95% Wilson score interval for a binomial proportion."""
    if n == 0:
        return (0.0, 1.0)
    ci = binomtest(k, n).proportion_ci(confidence_level=0.95, method="wilson")
    return (float(ci.low), float(ci.high))


@dataclass
class EvalReport:
    classes: tuple
    confusion: np.ndarray                     # counts, row = actual, column = estimated
    folds: list = field(default_factory=list)  # [{subject, correct, total}]
    throughput: dict = field(default_factory=dict)

    @property
    def confusion_pct(self) -> np.ndarray:
        rows = self.confusion.sum(axis=1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            pct = np.where(rows > 0, 100.0 * self.confusion / np.maximum(rows, 1), 0.0)
        return pct

    @property
    def per_class_accuracy(self) -> np.ndarray:
        return np.diag(self.confusion_pct)

    @property
    def average_accuracy(self) -> float:
        present = self.confusion.sum(axis=1) > 0
        return float(self.per_class_accuracy[present].mean())

    @property
    def correct(self) -> int:
        return int(np.trace(self.confusion))

    @property
    def total(self) -> int:
        return int(self.confusion.sum())

    @property
    def overall_accuracy(self) -> float:
        return 100.0 * self.correct / max(self.total, 1)

    def confidence_interval(self) -> tuple[float, float]:
        lo, hi = wilson_interval(self.correct, self.total)
        return 100 * lo, 100 * hi

    def to_dict(self) -> dict:
        lo, hi = self.confidence_interval()
        return {
            "classes": list(self.classes),
            "confusion_counts": self.confusion.astype(int).tolist(),
            "confusion_percent": [[round(x, 4) for x in row] for row in self.confusion_pct.tolist()],
            "per_class_accuracy": {c: round(float(a), 4) for c, a in zip(self.classes, self.per_class_accuracy)},
            "average_accuracy": round(self.average_accuracy, 4),
            "overall_accuracy": round(self.overall_accuracy, 4),
            "overall_accuracy_ci95": [round(lo, 4), round(hi, 4)],
            "folds": [{"subject": f["subject"], "correct": f["correct"], "total": f["total"],
                       "accuracy": round(100.0 * f["correct"] / max(f["total"], 1), 4)}
                      for f in self.folds],
            "data": "synthetic",
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"

    def to_text(self) -> str:
        w = max(len(c) for c in self.classes) + 2
        lines = ["Confusion matrix (%, synthetic data; row = actual, column = estimated)",
                 " " * w + "".join(f"{i + 1:>8d}" for i in range(len(self.classes)))]
        for i, (c, row) in enumerate(zip(self.classes, self.confusion_pct)):
            lines.append(f"{i + 1} {c:<{w - 2}}" + "".join(f"{x:8.2f}" for x in row))
        lines.append(f"Average{'':<{w - 7}}{self.average_accuracy:8.2f}")
        lo, hi = self.confidence_interval()
        lines.append(f"Overall accuracy {self.overall_accuracy:.2f}% "
                     f"(95% CI {lo:.2f}-{hi:.2f}%, n={self.total})")
        lines.append("")
        lines.append("Per-subject accuracy (leave-one-subject-out)")
        lines.append("subject  " + "".join(f"{f['subject']:>8d}" for f in self.folds))
        lines.append("accuracy " + "".join(f"{100.0 * f['correct'] / max(f['total'], 1):8.2f}"
                                           for f in self.folds))
        return "\n".join(lines) + "\n"


def evaluate_fold(items: list[dict], held_out: int, bank: ClassifierBank,
                  dictionary: SymbolDictionary, classes=GESTURES):
    """Classify the held-out subject's recordings; returns (actual, predicted) pairs."""
    if bank.dictionary_hash != dictionary.hash:
        raise ValueError("fold bank was trained against a different dictionary")
    pairs = []
    for it in sorted((it for it in items if it["subject"] == held_out), key=lambda it: it["path"]):
        S = symbolize(it["features"], dictionary)
        _, k = classify(bank, S)
        pairs.append((classes.index(it["label"]), k))
    return pairs


def loso_evaluate(items: list[dict], train_cfg: TrainConfig = TrainConfig(),
                  classes=GESTURES) -> EvalReport:
    """Leave-one-subject-out: one fold per subject, pooled confusion matrix."""
    confusion = np.zeros((len(classes), len(classes)), dtype=np.int64)
    folds = []
    t0 = time.perf_counter()
    n_classified = 0
    t_classify = 0.0
    for s in sorted({it["subject"] for it in items}):
        bank, dictionary = train_fold(items, s, train_cfg, classes)
        tc = time.perf_counter()
        pairs = evaluate_fold(items, s, bank, dictionary, classes)
        t_classify += time.perf_counter() - tc
        for a, p in pairs:
            confusion[a, p] += 1
        n_classified += len(pairs)
        folds.append({"subject": s, "correct": sum(a == p for a, p in pairs), "total": len(pairs)})
    report = EvalReport(tuple(classes), confusion, folds)
    report.throughput = {"train_eval_seconds": time.perf_counter() - t0,
                         "gestures_per_second": n_classified / max(t_classify, 1e-12)}
    return report
