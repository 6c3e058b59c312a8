"""Leave-one-sequence-out protocol, accuracy metrics and annotator agreement."""

import csv
import hashlib
import io
import json
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from itertools import combinations

import numpy as np

from .bow import build_codebooks, encode_dataset
from .emotion import emotion_aware_feature, fit_behavior_on_emotion, fit_emotion_bank
from .latent import LatentConfig, fit_latent, latent_decision
from .svm import TrainConfig, predict_batch, train_one_vs_all

METHODS = ("lowlevel", "aware", "emotion", "latent")
METHOD_TITLES = {"lowlevel": "low-level", "aware": "emotion-aware", "emotion": "emotion-based",
                 "latent": "latent"}
_ALIASES = {"low-level": "lowlevel", "emotion-aware": "aware", "emotion-based": "emotion"}
REPORT_SCHEMA = 1


def canonical_method(name):
    key = _ALIASES.get(str(name).strip().lower(), str(name).strip().lower())
    if key not in METHODS:
        raise ValueError(f"unknown method {name!r}; choose from {', '.join(METHODS)}")
    return key


# ------------------------------------------------------------------ protocol

@dataclass(frozen=True)
class FoldPlan:
    folds: tuple  # (train sequence ids, test sequence id) pairs

    def __len__(self):
        return len(self.folds)

    def __iter__(self):
        return iter(self.folds)


def loso_splits(ds):
    """One fold per sequence, ordered by sequence id; the held-out sequence is
    removed entirely from training."""
    seqs = tuple(sorted(ds.sequences if hasattr(ds, "sequences") else set(ds)))
    if len(seqs) < 2:
        raise ValueError(f"leave-one-sequence-out needs at least 2 sequences, got {len(seqs)}")
    return FoldPlan(tuple((tuple(s for s in seqs if s != t), t) for t in seqs))


# ------------------------------------------------------------------- metrics

@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    labels: tuple
    counts: np.ndarray

    @property
    def row_percent(self):
        c = np.asarray(self.counts, dtype=float)
        tot = c.sum(axis=1, keepdims=True)
        return np.divide(100.0 * c, tot, out=np.zeros_like(c), where=tot > 0)

    def to_dict(self):
        return {"labels": list(self.labels), "counts": self.counts.tolist(),
                "row_percent": self.row_percent.tolist()}

    def to_csv(self, percent=True):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["truth\\pred"] + list(self.labels))
        rows = self.row_percent if percent else self.counts
        for name, row in zip(self.labels, rows):
            w.writerow([name] + [f"{v:.4f}" if percent else int(v) for v in row])
        return buf.getvalue()


def confusion_matrix(truth, pred, order):
    order = list(order)
    truth, pred = list(truth), list(pred)
    if len(truth) != len(pred):
        raise ValueError(f"truth has {len(truth)} labels, pred has {len(pred)}")
    pos = {lab: i for i, lab in enumerate(order)}
    counts = np.zeros((len(order), len(order)), dtype=np.int64)
    for t, p in zip(truth, pred):
        if t not in pos or p not in pos:
            raise ValueError(f"label {t if t not in pos else p!r} is not in the class order")
        counts[pos[t], pos[p]] += 1
    return ConfusionMatrix(tuple(order), counts)


def average_accuracy(truth, pred):
    """Class-averaged recall over the classes present in ``truth``."""
    truth, pred = np.asarray(truth), np.asarray(pred)
    if truth.size == 0:
        raise ValueError("average_accuracy needs at least one sample")
    if truth.shape != pred.shape:
        raise ValueError("truth and pred lengths differ")
    return float(np.mean([np.mean(pred[truth == c] == c) for c in np.unique(truth)]))


def micro_accuracy(truth, pred):
    truth, pred = np.asarray(truth), np.asarray(pred)
    if truth.size == 0:
        raise ValueError("micro_accuracy needs at least one sample")
    return float(np.mean(truth == pred))


# ----------------------------------------------------------------- agreement

def cohen_kappa_from_table(table):
    """(p_o, p_e, kappa) for a square rater-1 x rater-2 contingency table."""
    t = np.asarray(table, dtype=float)
    n = t.sum()
    if t.ndim != 2 or t.shape[0] != t.shape[1] or n <= 0:
        raise ValueError("need a non-empty square contingency table")
    p_o = np.trace(t) / n
    p_e = float(t.sum(axis=1) @ t.sum(axis=0)) / n ** 2
    if p_o == 1.0:
        return 1.0, p_e, 1.0
    return float(p_o), p_e, float((p_o - p_e) / (1.0 - p_e))


def _label_matrix(annotations):
    rows = [list(r) for r in annotations]
    if not rows:
        raise ValueError("need at least one clip")
    m = len(rows[0])
    if m < 2:
        raise ValueError("agreement needs at least 2 annotators")
    if any(len(r) != m for r in rows):
        raise ValueError("every clip needs the same number of annotators")
    return rows, m


def fleiss_kappa(annotations):
    rows, m = _label_matrix(annotations)
    cats = sorted({a for r in rows for a in r}, key=str)
    n = np.array([[Counter(r)[c] for c in cats] for r in rows], dtype=float)
    p_j = n.sum(axis=0) / n.sum()
    p_i = ((n * (n - 1)).sum(axis=1)) / (m * (m - 1))
    p_bar = p_i.mean()
    p_e = float(p_j @ p_j)
    if p_bar == 1.0:
        return 1.0
    return float((p_bar - p_e) / (1.0 - p_e))


def agreement(annotations):
    """Overall agreement (mean pairwise raw agreement) and kappa.

    Kappa is Cohen's for two annotators and Fleiss' for more.
    """
    rows, m = _label_matrix(annotations)
    pairs = list(combinations(range(m), 2))
    overall = float(np.mean([[r[a] == r[b] for a, b in pairs] for r in rows]))
    if m == 2:
        cats = sorted({a for r in rows for a in r}, key=str)
        idx = {c: i for i, c in enumerate(cats)}
        table = np.zeros((len(cats), len(cats)))
        for r in rows:
            table[idx[r[0]], idx[r[1]]] += 1
        kappa = cohen_kappa_from_table(table)[2]
    else:
        kappa = fleiss_kappa(rows)
    return overall, kappa


def pairwise_confusability(annotations):
    """Share of annotator-pair disagreements falling on each unordered label pair."""
    rows, m = _label_matrix(annotations)
    hits = Counter()
    for r in rows:
        for a, b in combinations(range(m), 2):
            if r[a] != r[b]:
                hits[tuple(sorted((r[a], r[b]), key=str))] += 1
    total = sum(hits.values())
    labels = sorted({a for r in rows for a in r}, key=str)
    out = {tuple(sorted(p, key=str)): 0.0 for p in combinations(labels, 2)}
    for p, n in hits.items():
        out[p] = n / total
    return out


# ---------------------------------------------------------------- experiments

@dataclass
class ExperimentConfig:
    codebook_size: int = 64
    lam: float = 0.01
    seed: int = 0
    sample_fraction: float = 0.2
    kmeans_iters: int = 100
    svm_tol: float = 1e-6
    svm_epochs: int = 200
    latent_outer_iters: int = 10
    latent_init: str = "behavior-inherited"
    latent_fixed_e: bool = False
    threads: int = 1

    def __post_init__(self):
        if self.codebook_size < 1:
            raise ValueError("codebook_size must be >= 1")
        if not self.lam > 0:
            raise ValueError("lambda must be > 0")
        if not 0 < self.sample_fraction <= 1:
            raise ValueError("sample_fraction must lie in (0, 1]")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")

    def svm(self):
        return TrainConfig(lam=self.lam, epochs=self.svm_epochs, tol=self.svm_tol, seed=self.seed)

    def latent(self):
        return LatentConfig(lam=self.lam, outer_iters=self.latent_outer_iters,
                            init_mode=self.latent_init)

    def snapshot(self):
        d = asdict(self)
        d.pop("threads")  # does not affect results
        return d


@dataclass(eq=False)
class ExperimentReport:
    method: str
    class_names: tuple
    folds: list
    average_accuracy: float
    micro_accuracy: float
    confusion: ConfusionMatrix
    config: dict
    seed: int
    dataset: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)

    @property
    def fold_accuracies(self):
        return [f["accuracy"] for f in self.folds]

    def to_dict(self):
        return {"schema": REPORT_SCHEMA, "method": self.method, "classes": list(self.class_names),
                "average_accuracy": self.average_accuracy, "micro_accuracy": self.micro_accuracy,
                "folds": self.folds, "confusion": self.confusion.to_dict(), "config": self.config,
                "seed": self.seed, "dataset": self.dataset, "extras": self.extras}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d):
        validate_report(d)
        conf = ConfusionMatrix(tuple(d["confusion"]["labels"]),
                               np.asarray(d["confusion"]["counts"], dtype=np.int64))
        return cls(d["method"], tuple(d["classes"]), d["folds"], d["average_accuracy"],
                   d["micro_accuracy"], conf, d["config"], d["seed"], d.get("dataset", {}),
                   d.get("extras", {}))

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_text(self):
        title = METHOD_TITLES.get(self.method, self.method)
        lines = [f"method: {title}",
                 f"average accuracy (class-averaged): {100 * self.average_accuracy:.2f}%",
                 f"micro accuracy: {100 * self.micro_accuracy:.2f}%",
                 f"folds: {len(self.folds)}", ""]
        width = max(len(n) for n in self.class_names) + 2
        lines.append("".ljust(width) + "".join(n[:10].rjust(11) for n in self.class_names))
        for name, row in zip(self.class_names, self.confusion.row_percent):
            lines.append(name.ljust(width) + "".join(f"{v:11.2f}" for v in row))
        return "\n".join(lines) + "\n"


_REPORT_KEYS = {"schema": int, "method": str, "classes": list, "average_accuracy": float,
                "micro_accuracy": float, "folds": list, "confusion": dict, "config": dict,
                "seed": int}


def validate_report(d):
    """Raise ValueError unless ``d`` is a well-formed report document."""
    if not isinstance(d, dict):
        raise ValueError("report must be a JSON object")
    for key, typ in _REPORT_KEYS.items():
        if key not in d:
            raise ValueError(f"report is missing {key!r}")
        if typ is float and isinstance(d[key], int):
            continue
        if not isinstance(d[key], typ):
            raise ValueError(f"report field {key!r} must be {typ.__name__}")
    if d["schema"] != REPORT_SCHEMA:
        raise ValueError(f"unsupported report schema {d['schema']!r}")
    canonical_method(d["method"])
    n = len(d["classes"])
    counts = np.asarray(d["confusion"].get("counts"))
    if counts.shape != (n, n):
        raise ValueError("confusion counts do not match the class list")
    if not 0.0 <= d["average_accuracy"] <= 1.0:
        raise ValueError("average_accuracy outside [0, 1]")
    return d


def dataset_fingerprint(ds):
    h = hashlib.sha256()
    for c in ds.clips:
        h.update(f"{c.clip_id}|{c.sequence_id}|{c.behavior}|{c.emotion_annotations}|".encode())
        for ch in sorted(c.descriptors):
            h.update(ch.encode())
            h.update(np.ascontiguousarray(c.descriptors[ch], dtype=np.float64).tobytes())
        if c.feature is not None:
            h.update(np.ascontiguousarray(c.feature, dtype=np.float64).tobytes())
    return h.hexdigest()


@dataclass(eq=False)
class FittedFold:
    """Everything fitted on one fold's training clips."""
    codebooks: dict
    models: dict

    def fingerprint(self):
        doc = {"codebooks": {ch: cb.to_dict() for ch, cb in sorted(self.codebooks.items())},
               "models": {name: m.to_dict() for name, m in sorted(self.models.items())}}
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


def _needs_codebooks(ds):
    return any(c.feature is None for c in ds.clips)


def fit_fold(train, methods, cfg):
    """Fit codebooks and the requested models on ``train`` only."""
    methods = [canonical_method(m) for m in methods]
    codebooks = {}
    if _needs_codebooks(train):
        codebooks = build_codebooks(train, cfg.codebook_size, cfg.seed,
                                    fraction=cfg.sample_fraction, max_iter=cfg.kmeans_iters)
        train = encode_dataset(train, codebooks)
    names = list(train.behavior_names)
    y = [names[b] for b in train.behaviors()]
    models = {}
    svm_cfg = cfg.svm()
    if "aware" in methods:
        E = np.stack([emotion_aware_feature(e) for e in train.emotions()])
        models["aware"] = train_one_vs_all(E, y, svm_cfg, class_order=names)
    X = train.features() if {"lowlevel", "emotion", "latent"} & set(methods) else None
    if "lowlevel" in methods:
        models["lowlevel"] = train_one_vs_all(X, y, svm_cfg, class_order=names)
    if {"emotion", "latent"} & set(methods):
        bank = fit_emotion_bank(X, train.emotions(), svm_cfg, train.emotion_names)
        if "emotion" in methods:
            models["emotion"] = fit_behavior_on_emotion(X, y, bank, svm_cfg, class_order=names)
        if "latent" in methods:
            models["latent"] = fit_latent(X, y, train.emotions(), bank, cfg.latent(),
                                          class_order=names)
    return FittedFold(codebooks, models)


def _predict(fitted, method, test, cfg):
    if method == "aware":
        E = np.stack([emotion_aware_feature(e) for e in test.emotions()])
        return predict_batch(fitted.models["aware"], E)[0], None
    X = test.features()
    if method == "lowlevel":
        return predict_batch(fitted.models["lowlevel"], X)[0], None
    if method == "emotion":
        return np.argmax(fitted.models["emotion"].decision(X), axis=1), None
    scores, best = latent_decision(fitted.models["latent"], X, fixed_e=cfg.latent_fixed_e)
    pred = np.argmax(scores, axis=1)
    return pred, best[np.arange(len(pred)), pred]


def _run_fold(ds, fold_id, train_ids, test_id, methods, cfg):
    try:
        train, test = ds.subset(train_ids), ds.subset([test_id])
        fitted = fit_fold(train, methods, cfg)
        if fitted.codebooks:
            test = encode_dataset(test, fitted.codebooks)
        return {m: _predict(fitted, m, test, cfg) for m in methods}, test.behaviors()
    except Exception as exc:
        raise RuntimeError(f"fold {fold_id} (test sequence {test_id}): {exc}") from exc


def run_methods(ds, methods, cfg=None):
    """LOSO evaluation of several methods sharing each fold's codebooks and bank."""
    cfg = cfg or ExperimentConfig()
    methods = [canonical_method(m) for m in methods]
    plan = loso_splits(ds)
    jobs = [(ds, i, tr, te, methods, cfg) for i, (tr, te) in enumerate(plan)]
    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            results = list(pool.map(lambda a: _run_fold(*a), jobs))
    else:
        results = [_run_fold(*a) for a in jobs]
    names = tuple(ds.behavior_names)
    meta = {"clips": len(ds), "sequences": len(ds.sequences), "K": ds.K, "B": ds.B,
            "sha256": dataset_fingerprint(ds)}
    reports = {}
    for m in methods:
        truth = np.concatenate([r[1] for r in results])
        pred = np.concatenate([r[0][m][0] for r in results])
        folds = []
        for (_, te), (preds, yt) in zip(plan, results):
            p = preds[m][0]
            folds.append({"test_sequence": te, "n_test": int(len(yt)),
                          "accuracy": micro_accuracy(yt, p), "class_averaged": average_accuracy(yt, p)})
        extras = {}
        if m == "latent":
            best = np.concatenate([r[0][m][1] for r in results])
            extras["emotion_activation"] = {
                names[b]: dict(zip(ds.emotion_names, np.round(best[truth == b].mean(axis=0), 6).tolist()))
                for b in range(len(names)) if (truth == b).any()}
            extras["test_time_e"] = "fixed" if cfg.latent_fixed_e else "max"
        reports[m] = ExperimentReport(
            method=m, class_names=names, folds=folds,
            average_accuracy=average_accuracy(truth, pred), micro_accuracy=micro_accuracy(truth, pred),
            confusion=confusion_matrix([names[t] for t in truth], [names[p] for p in pred], names),
            config=cfg.snapshot(), seed=cfg.seed, dataset=meta, extras=extras)
    return reports


def run_experiment(ds, method, cfg=None):
    return run_methods(ds, [method], cfg)[canonical_method(method)]
