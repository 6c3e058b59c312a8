"""Clip records, manifest I/O, annotation aggregation and the synthetic generator."""

import csv
import json
import math
from collections import Counter
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Mapping, Optional

import numpy as np

from .labels import BEHAVIORS, EMOTIONS, EmotionLabel

BEHAVIOR_NAMES = tuple(b.value for b in BEHAVIORS)
EMOTION_NAMES = tuple(e.value for e in EMOTIONS)

# canonical order for per-channel work and concatenated features
CHANNEL_ORDER = ("trajectory", "hog", "hof", "mbh")
SYNTH_CHANNEL = "generic"

MANIFEST_HEADER = ["clip_id", "sequence_id", "behavior", "emotions", "descriptor_path"]


class ManifestError(ValueError):
    pass


class ConfigError(ValueError):
    pass


def channel_sort_key(name):
    if name in CHANNEL_ORDER:
        return (0, CHANNEL_ORDER.index(name), name)
    return (1, 0, name)


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ClipRecord:
    """One video clip.

    ``behavior`` and the annotation entries are indices into the owning
    dataset's name tuples. ``emotion`` is the aggregated K-dim binary vector.
    ``descriptors`` maps channel name to an (n, dim) array; ``feature`` holds
    an encoded vector once the clip has gone through a codebook.
    """

    clip_id: str
    sequence_id: str
    behavior: int
    emotion_annotations: tuple
    emotion: np.ndarray
    descriptors: Mapping[str, np.ndarray] = field(default_factory=dict)
    feature: Optional[np.ndarray] = None

    @property
    def emotion_index(self):
        return int(np.argmax(self.emotion))


@dataclass(frozen=True, eq=False)
class Dataset:
    clips: tuple
    behavior_names: tuple = BEHAVIOR_NAMES
    emotion_names: tuple = EMOTION_NAMES

    @property
    def K(self):
        return len(self.emotion_names)

    @property
    def B(self):
        return len(self.behavior_names)

    @property
    def sequences(self):
        return tuple(sorted({c.sequence_id for c in self.clips}))

    @property
    def channels(self):
        names = set()
        for c in self.clips:
            names.update(c.descriptors)
        return tuple(sorted(names, key=channel_sort_key))

    def __len__(self):
        return len(self.clips)

    def behaviors(self):
        return np.array([c.behavior for c in self.clips], dtype=np.int64)

    def emotions(self):
        if not self.clips:
            return np.zeros((0, self.K), dtype=np.int8)
        return np.stack([c.emotion for c in self.clips])

    def features(self):
        if any(c.feature is None for c in self.clips):
            raise ValueError("dataset is not encoded")
        return np.stack([c.feature for c in self.clips])

    def subset(self, sequence_ids):
        keep = set(sequence_ids)
        return replace(self, clips=tuple(c for c in self.clips if c.sequence_id in keep))

    def with_features(self, features):
        features = np.asarray(features, dtype=float)
        if len(features) != len(self.clips):
            raise ValueError("one feature row per clip required")
        clips = tuple(replace(c, feature=_frozen(f, float)) for c, f in zip(self.clips, features))
        return replace(self, clips=clips)


def make_clip(clip_id, sequence_id, behavior, annotations, descriptors=None,
              feature=None, k=len(EMOTION_NAMES)):
    """Build a ClipRecord, aggregating annotations by majority vote."""
    annotations = tuple(int(a) for a in annotations)
    e = np.zeros(k, dtype=np.int8)
    if annotations:
        e[majority_vote(annotations)] = 1
    desc = {name: _frozen(v, float) for name, v in (descriptors or {}).items()}
    return ClipRecord(
        clip_id=str(clip_id),
        sequence_id=str(sequence_id),
        behavior=int(behavior),
        emotion_annotations=annotations,
        emotion=_frozen(e, np.int8),
        descriptors=desc,
        feature=None if feature is None else _frozen(feature, float),
    )


def majority_vote(annotations):
    """Most frequent label; ties go to the label earliest in the fixed order.

    Works on EmotionLabel members or plain integer indices and returns the
    same kind it was given.
    """
    if len(annotations) == 0:
        raise ValueError("majority_vote needs at least one annotation")
    as_enum = isinstance(annotations[0], EmotionLabel)
    idx = [a.index if isinstance(a, EmotionLabel) else int(a) for a in annotations]
    counts = Counter(idx)
    best = max(counts.values())
    winner = min(i for i, n in counts.items() if n == best)
    return EmotionLabel.from_index(winner) if as_enum else winner


# ---------------------------------------------------------------- validation

@dataclass(frozen=True)
class Violation:
    clip_id: str
    field: str
    message: str

    def __str__(self):
        return f"{self.clip_id}: {self.field}: {self.message}"


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple = ()

    @property
    def ok(self):
        return not self.violations

    def __len__(self):
        return len(self.violations)

    def __iter__(self):
        return iter(self.violations)


def validate_dataset(ds):
    """Collect every invariant violation in ``ds``; never raises."""
    out = []
    seen = set()
    for c in ds.clips:
        cid = c.clip_id
        if cid in seen:
            out.append(Violation(cid, "clip_id", "duplicate clip id"))
        seen.add(cid)
        if not c.sequence_id:
            out.append(Violation(cid, "sequence_id", "empty sequence id"))
        if not 0 <= c.behavior < ds.B:
            out.append(Violation(cid, "behavior", f"index {c.behavior} outside 0..{ds.B - 1}"))
        if not c.emotion_annotations:
            out.append(Violation(cid, "emotions", "no annotator entries"))
        elif any(not 0 <= a < ds.K for a in c.emotion_annotations):
            out.append(Violation(cid, "emotions", "annotation index out of range"))
        e = np.asarray(c.emotion)
        if e.shape != (ds.K,) or not np.isin(e, (0, 1)).all():
            out.append(Violation(cid, "emotion", f"expected binary vector of length {ds.K}"))
        elif int(e.sum()) != 1:
            out.append(Violation(cid, "emotion", f"ground-truth emotion has {int(e.sum())} non-zero entries"))
        if not c.descriptors and c.feature is None:
            out.append(Violation(cid, "descriptors", "neither descriptors nor encoded feature present"))
        for name, d in c.descriptors.items():
            d = np.asarray(d)
            if d.ndim != 2:
                out.append(Violation(cid, f"channel {name}", "descriptor array must be 2-D"))
            elif not np.isfinite(d).all():
                out.append(Violation(cid, f"channel {name}", "non-finite descriptor entry"))
        if c.feature is not None and not np.isfinite(c.feature).all():
            out.append(Violation(cid, "feature", "non-finite feature entry"))
    # channel dims must agree across clips
    dims = {}
    for c in ds.clips:
        for name, d in c.descriptors.items():
            d = np.asarray(d)
            if d.ndim != 2:
                continue
            if name in dims and dims[name] != d.shape[1]:
                out.append(Violation(c.clip_id, f"channel {name}",
                                     f"dim {d.shape[1]} differs from {dims[name]}"))
            dims.setdefault(name, d.shape[1])
    return ValidationReport(tuple(out))


# ---------------------------------------------------------------- manifest I/O

def load_manifest(path):
    """Read a manifest CSV and the descriptor JSON files it references.

    Descriptor paths are resolved relative to the manifest's directory.
    """
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    base = path.parent
    clips = []
    dims = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != MANIFEST_HEADER:
            raise ManifestError(f"{path}: line 1: header must be {','.join(MANIFEST_HEADER)}")
        for row in reader:
            line = reader.line_num
            if not row or all(not x.strip() for x in row):
                continue
            if len(row) != len(MANIFEST_HEADER):
                raise ManifestError(f"{path}: line {line}: expected {len(MANIFEST_HEADER)} fields, got {len(row)}")
            clip_id, seq, behavior, emotions, desc_path = (x.strip() for x in row)
            if not clip_id:
                raise ManifestError(f"{path}: line {line}: field clip_id: empty")
            if not seq:
                raise ManifestError(f"{path}: line {line}: field sequence_id: empty")
            b = _lookup(behavior, BEHAVIOR_NAMES, path, line, "behavior")
            names = [x for x in emotions.split(";") if x.strip()]
            if not names:
                raise ManifestError(f"{path}: line {line}: field emotions: no annotator entries")
            ann = [_lookup(x, EMOTION_NAMES, path, line, "emotions") for x in names]
            if not desc_path:
                raise ManifestError(f"{path}: line {line}: field descriptor_path: empty")
            descriptors, feature = _read_descriptor_file(base / desc_path, path, line)
            for name, d in descriptors.items():
                if name in dims and dims[name] != d.shape[1]:
                    raise ManifestError(
                        f"{path}: line {line}: field descriptor_path: channel {name} has dim "
                        f"{d.shape[1]}, earlier clips have {dims[name]}")
                dims.setdefault(name, d.shape[1])
            clips.append(make_clip(clip_id, seq, b, ann, descriptors, feature))
    return Dataset(tuple(clips))


def _lookup(text, names, path, line, fieldname):
    key = text.strip().lower()
    if key not in names:
        raise ManifestError(f"{path}: line {line}: field {fieldname}: unknown label {text!r}")
    return names.index(key)


def _read_descriptor_file(fpath, manifest, line):
    where = f"{manifest}: line {line}: field descriptor_path"
    try:
        with open(fpath) as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise ManifestError(f"{where}: missing file {fpath}") from None
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{where}: {fpath}: invalid JSON ({exc})") from None
    channels = doc.get("channels", [])
    out = {}
    for ch in channels:
        try:
            name = str(ch["name"]).lower()
            dim = int(ch["dim"])
            vecs = np.asarray(ch["vectors"], dtype=float)
        except (KeyError, TypeError, ValueError) as exc:
            raise ManifestError(f"{where}: {fpath}: malformed channel entry ({exc})") from None
        if vecs.size == 0:
            vecs = vecs.reshape(0, dim)
        if vecs.ndim != 2 or vecs.shape[1] != dim:
            raise ManifestError(f"{where}: {fpath}: channel {name}: vectors do not match dim {dim}")
        if not np.isfinite(vecs).all():
            raise ManifestError(f"{where}: {fpath}: channel {name}: non-finite entry")
        out[name] = vecs
    feature = doc.get("feature")
    if feature is not None:
        feature = np.asarray(feature, dtype=float)
    if not out and feature is None:
        raise ManifestError(f"{where}: {fpath}: no descriptors and no feature")
    return out, feature


def save_manifest(ds, out_dir, name="manifest.csv"):
    """Write ``ds`` as a manifest plus one descriptor JSON per clip."""
    out_dir = Path(out_dir)
    (out_dir / "descriptors").mkdir(parents=True, exist_ok=True)
    manifest = out_dir / name
    with open(manifest, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_HEADER)
        for c in ds.clips:
            rel = f"descriptors/{c.clip_id}.json"
            doc = {"channels": [
                {"name": n, "dim": int(c.descriptors[n].shape[1]),
                 "vectors": c.descriptors[n].tolist()}
                for n in sorted(c.descriptors, key=channel_sort_key)
            ]}
            if c.feature is not None:
                doc["feature"] = c.feature.tolist()
            with open(out_dir / rel, "w") as dh:
                json.dump(doc, dh, separators=(",", ":"))
            w.writerow([
                c.clip_id, c.sequence_id, ds.behavior_names[c.behavior],
                ";".join(ds.emotion_names[a] for a in c.emotion_annotations), rel,
            ])
    return manifest


def datasets_equal(a, b):
    """Content equality (arrays compared exactly)."""
    if (a.behavior_names, a.emotion_names) != (b.behavior_names, b.emotion_names):
        return False
    if len(a.clips) != len(b.clips):
        return False
    for x, y in zip(a.clips, b.clips):
        if (x.clip_id, x.sequence_id, x.behavior, x.emotion_annotations) != \
                (y.clip_id, y.sequence_id, y.behavior, y.emotion_annotations):
            return False
        if not np.array_equal(x.emotion, y.emotion):
            return False
        if set(x.descriptors) != set(y.descriptors):
            return False
        if any(not np.array_equal(x.descriptors[n], y.descriptors[n]) for n in x.descriptors):
            return False
        if (x.feature is None) != (y.feature is None):
            return False
        if x.feature is not None and not np.array_equal(x.feature, y.feature):
            return False
    return True


# ---------------------------------------------------------------- synthetic data

# Emotion-mediated behavior -> emotion table.
# Rows: panic, fight, congestion, obstacle, neutral.
# Cols: angry, happy, excited, scared, sad, neutral.
# Each behavior has one characteristic emotion; the rest of the mass is
# spread evenly, so the emotion only partly determines the behavior.
MEDIATED_TABLE = (
    (0.06, 0.06, 0.06, 0.70, 0.06, 0.06),  # panic: scared
    (0.70, 0.06, 0.06, 0.06, 0.06, 0.06),  # fight: angry
    (0.06, 0.06, 0.06, 0.06, 0.70, 0.06),  # congestion: sad
    (0.06, 0.06, 0.70, 0.06, 0.06, 0.06),  # obstacle: excited
    (0.06, 0.06, 0.06, 0.06, 0.06, 0.70),  # neutral: neutral
)


@dataclass
class SynthConfig:
    n_sequences: int
    clips_per_sequence: int
    behavior_to_emotion: list
    emotion_to_mean: list
    noise_scale: float
    descriptor_dim: int
    descriptors_per_clip: int
    seed: int = 0

    def validate(self):
        for name in ("n_sequences", "clips_per_sequence", "descriptor_dim"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or isinstance(v, bool) or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        if not isinstance(self.descriptors_per_clip, (int, np.integer)) or self.descriptors_per_clip < 0:
            raise ConfigError("descriptors_per_clip must be a non-negative integer")
        if not isinstance(self.seed, (int, np.integer)) or not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        try:
            noise = float(self.noise_scale)
        except (TypeError, ValueError):
            raise ConfigError("noise_scale must be a real number") from None
        if not noise > 0 or not math.isfinite(noise):
            raise ConfigError("noise_scale must be > 0")
        try:
            table = np.asarray(self.behavior_to_emotion, dtype=float)
            means = np.asarray(self.emotion_to_mean, dtype=float)
        except (TypeError, ValueError):
            raise ConfigError("behavior_to_emotion and emotion_to_mean must be numeric matrices") from None
        if table.ndim != 2 or table.shape[0] < 1 or table.shape[1] < 1:
            raise ConfigError("behavior_to_emotion must be a B x K matrix")
        if (table < 0).any() or not np.isfinite(table).all():
            raise ConfigError("behavior_to_emotion entries must be finite and non-negative")
        bad = np.flatnonzero(np.abs(table.sum(axis=1) - 1.0) > 1e-9)
        if bad.size:
            raise ConfigError(f"behavior_to_emotion row {int(bad[0])} does not sum to 1")
        if means.shape != (table.shape[1], self.descriptor_dim):
            raise ConfigError(
                f"emotion_to_mean must be {table.shape[1]} x {self.descriptor_dim}, got {means.shape}")
        if not np.isfinite(means).all():
            raise ConfigError("emotion_to_mean entries must be finite")
        return self

    def to_dict(self):
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["behavior_to_emotion"] = np.asarray(self.behavior_to_emotion, dtype=float).tolist()
        d["emotion_to_mean"] = np.asarray(self.emotion_to_mean, dtype=float).tolist()
        d["noise_scale"] = float(self.noise_scale)
        return d

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise ConfigError("synthetic config must be a JSON object")
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        missing = {f.name for f in fields(cls) if f.name != "seed"} - set(d)
        if missing:
            raise ConfigError(f"missing config keys: {sorted(missing)}")
        return cls(**d).validate()

    @classmethod
    def load(cls, path):
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
        return cls.from_dict(doc)

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)


def mediated_config(seed=0, n_sequences=31, clips_per_sequence=50, descriptor_dim=32,
                    descriptors_per_clip=10, noise_scale=4.0, mean_spread=1.0,
                    table=MEDIATED_TABLE):
    """Synthetic config in which emotion mediates behavior and appearance.

    Emotion means are drawn from N(0, mean_spread^2) using ``seed``.
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0xE5,)))
    table = np.asarray(table, dtype=float)
    means = rng.normal(0.0, mean_spread, size=(table.shape[1], descriptor_dim))
    return SynthConfig(
        n_sequences=n_sequences,
        clips_per_sequence=clips_per_sequence,
        behavior_to_emotion=table.tolist(),
        emotion_to_mean=means.tolist(),
        noise_scale=noise_scale,
        descriptor_dim=descriptor_dim,
        descriptors_per_clip=descriptors_per_clip,
        seed=seed,
    ).validate()


def uniform_config(seed=0, **kw):
    """Same generator, but emotion carries no behavior information."""
    n_b, n_k = len(BEHAVIOR_NAMES), len(EMOTION_NAMES)
    table = np.full((n_b, n_k), 1.0 / n_k)
    return mediated_config(seed=seed, table=table, **kw)


def synthesize_dataset(cfg):
    """Sample a dataset: behavior -> emotion -> descriptors.

    Behaviors cycle over the global clip index, so classes are balanced to
    within one clip. Each clip draws from its own substream of ``cfg.seed``.
    """
    cfg.validate()
    table = np.asarray(cfg.behavior_to_emotion, dtype=float)
    means = np.asarray(cfg.emotion_to_mean, dtype=float)
    n_b, n_k = table.shape
    bnames = BEHAVIOR_NAMES if n_b == len(BEHAVIOR_NAMES) else tuple(f"b{i}" for i in range(n_b))
    enames = EMOTION_NAMES if n_k == len(EMOTION_NAMES) else tuple(f"e{i}" for i in range(n_k))
    width = len(str(cfg.n_sequences - 1))
    cwidth = len(str(cfg.clips_per_sequence - 1))
    clips = []
    g = 0
    for s in range(cfg.n_sequences):
        seq = f"seq{s:0{width}d}"
        for c in range(cfg.clips_per_sequence):
            rng = np.random.default_rng(np.random.SeedSequence(int(cfg.seed), spawn_key=(g,)))
            b = g % n_b
            emo = int(rng.choice(n_k, p=table[b]))
            desc = means[emo] + cfg.noise_scale * rng.standard_normal(
                (cfg.descriptors_per_clip, cfg.descriptor_dim))
            clips.append(make_clip(f"{seq}_c{c:0{cwidth}d}", seq, b, (emo,),
                                   {SYNTH_CHANNEL: desc}, k=n_k))
            g += 1
    return Dataset(tuple(clips), behavior_names=bnames, emotion_names=enames)
