"""Bag-of-visual-words: k-means codebooks and histogram encoding."""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .dataset import channel_sort_key

# rows per exact-distance block; keeps the (rows, d, D) temporary near 32 MB
_BLOCK_BYTES = 32 * 2 ** 20


@dataclass(frozen=True, eq=False)
class Codebook:
    channel: str
    centroids: np.ndarray
    distortion_history: tuple = field(default=(), repr=False)
    n_iter: int = 0

    def __post_init__(self):
        c = np.array(self.centroids, dtype=float)
        if c.ndim != 2 or c.shape[0] < 1:
            raise ValueError("centroids must be a non-empty (d, D) array")
        if not np.isfinite(c).all():
            raise ValueError("centroids contain non-finite entries")
        c.setflags(write=False)
        object.__setattr__(self, "centroids", c)

    @property
    def d(self):
        return self.centroids.shape[0]

    @property
    def dim(self):
        return self.centroids.shape[1]

    def to_dict(self):
        return {"channel": self.channel, "d": self.d, "centroids": self.centroids.tolist()}

    @classmethod
    def from_dict(cls, doc):
        cb = cls(channel=str(doc["channel"]), centroids=np.asarray(doc["centroids"], dtype=float))
        if int(doc["d"]) != cb.d:
            raise ValueError(f"codebook declares d={doc['d']} but has {cb.d} centroids")
        return cb

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def sample_descriptors(ds, channel, fraction, seed):
    """Uniform sample without replacement of ceil(fraction * total) descriptors.

    The sample keeps canonical order (clip order, then row order), so
    ``fraction=1`` returns every descriptor unchanged.
    """
    if not 0 < fraction <= 1:
        raise ValueError(f"fraction must lie in (0, 1], got {fraction}")
    if len(ds.clips) == 0:
        raise ValueError("cannot sample from an empty dataset")
    blocks = []
    for c in ds.clips:
        if channel not in c.descriptors:
            raise KeyError(f"clip {c.clip_id} has no channel {channel!r}")
        blocks.append(c.descriptors[channel])
    allx = np.concatenate(blocks, axis=0)
    n = len(allx)
    take = math.ceil(fraction * n)
    if take >= n:
        return allx.copy()
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(n, size=take, replace=False))
    return allx[idx]


def _sq_dists_exact(x, c):
    out = np.empty((len(x), len(c)))
    rows = max(1, _BLOCK_BYTES // max(1, c.size * 8))
    for s in range(0, len(x), rows):
        diff = x[s:s + rows, None, :] - c[None, :, :]
        out[s:s + rows] = np.einsum("ijk,ijk->ij", diff, diff)
    return out


def nearest_centroid(x, centroids):
    """Index of the nearest centroid for each row of ``x`` and its squared distance.

    Ties go to the lowest centroid index. Distances come from the BLAS
    expansion; rows whose best two candidates are within rounding of each
    other are recomputed from explicit differences.
    """
    x = np.asarray(x, dtype=float)
    c = np.asarray(centroids, dtype=float)
    if x.ndim != 2 or x.shape[1] != c.shape[1]:
        raise ValueError(f"descriptor dim {x.shape[-1]} does not match codebook dim {c.shape[1]}")
    if len(x) == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0)
    xx = np.einsum("ij,ij->i", x, x)
    cc = np.einsum("ij,ij->i", c, c)
    d2 = xx[:, None] - 2.0 * (x @ c.T) + cc[None, :]
    idx = np.argmin(d2, axis=1)
    if c.shape[0] > 1:
        part = np.partition(d2, 1, axis=1)
        bound = 1e-10 * (xx + cc.max() + 1.0)
        unsure = np.flatnonzero(part[:, 1] - part[:, 0] <= bound)
    else:
        unsure = np.arange(len(x))
    best = d2[np.arange(len(x)), idx]
    if unsure.size:
        exact = _sq_dists_exact(x[unsure], c)
        idx[unsure] = np.argmin(exact, axis=1)
        best[unsure] = exact[np.arange(len(unsure)), idx[unsure]]
    return idx, np.maximum(best, 0.0)


def build_codebook(sample, d, seed, max_iter=100, tol=1e-6, channel="generic"):
    """k-means (k-means++ init, Lloyd updates) on a descriptor sample."""
    x = np.asarray(sample, dtype=float)
    if d < 1:
        raise ValueError("d must be >= 1")
    if x.ndim != 2 or len(x) < d:
        raise ValueError(f"sample of {len(x)} descriptors is smaller than d={d}")
    rng = np.random.default_rng(seed)
    centroids = _kmeanspp(x, d, rng)
    history = []
    it = 0
    for it in range(1, max_iter + 1):
        assign, dist = nearest_centroid(x, centroids)
        history.append(float(dist.sum()))
        if len(history) > 1 and history[-1] > history[-2] * (1 + 1e-9) + 1e-12:
            raise AssertionError(f"k-means distortion increased at iteration {it}")
        new = _update(x, assign, centroids)
        shift = np.sqrt(((new - centroids) ** 2).sum(axis=1)).max()
        centroids = new
        if shift < tol:
            break
    _, dist = nearest_centroid(x, centroids)
    history.append(float(dist.sum()))
    return Codebook(channel=channel, centroids=centroids, distortion_history=tuple(history), n_iter=it)


def _kmeanspp(x, d, rng):
    n = len(x)
    chosen = [int(rng.integers(n))]
    best = ((x - x[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(1, d):
        total = best.sum()
        if total > 0:
            i = int(rng.choice(n, p=best / total))
        else:
            free = np.setdiff1d(np.arange(n), chosen)
            i = int(rng.choice(free))
        chosen.append(i)
        best = np.minimum(best, ((x - x[i]) ** 2).sum(axis=1))
    return x[chosen].copy()


def _update(x, assign, centroids):
    d, dim = centroids.shape
    sums = np.zeros((d, dim))
    np.add.at(sums, assign, x)
    counts = np.bincount(assign, minlength=d)
    new = centroids.copy()
    full = counts > 0
    new[full] = sums[full] / counts[full, None]
    empty = np.flatnonzero(~full)
    if empty.size:
        # reseed each empty cluster on the point farthest from its own centroid
        far = (x - new[assign]) ** 2
        far = far.sum(axis=1)
        for j in empty:
            i = int(np.argmax(far))
            new[j] = x[i]
            far[i] = -1.0
    return new


def quantize(clip, cb, normalize=True):
    """Histogram of nearest visual words for one clip's descriptors."""
    if cb.channel not in clip.descriptors:
        raise KeyError(f"clip {clip.clip_id} has no channel {cb.channel!r}")
    return histogram(clip.descriptors[cb.channel], cb, normalize)


def histogram(descriptors, cb, normalize=True):
    x = np.asarray(descriptors, dtype=float)
    if x.size == 0:
        return np.zeros(cb.d)
    idx, _ = nearest_centroid(x, cb.centroids)
    h = np.bincount(idx, minlength=cb.d).astype(float)
    if normalize:
        h /= h.sum()
    return h


def build_codebooks(ds, d, seed, fraction=1.0, channels=None, max_iter=100, tol=1e-6):
    """One codebook per channel, each from a random descriptor subset of ``ds``."""
    channels = channels or ds.channels
    out = {}
    for i, ch in enumerate(sorted(channels, key=channel_sort_key)):
        sample = sample_descriptors(ds, ch, fraction, seed + i)
        if len(sample) < d:
            sample = sample_descriptors(ds, ch, 1.0, seed + i)
        out[ch] = build_codebook(sample, d, seed + i, max_iter=max_iter, tol=tol, channel=ch)
    return out


def encode_dataset(ds, codebooks, combine=True, channel=None, normalize=True):
    """Attach BoW features to every clip.

    With ``combine`` the feature is the concatenation of all codebook
    channels in canonical order; otherwise only ``channel`` is encoded.
    """
    if not isinstance(codebooks, dict):
        codebooks = {cb.channel: cb for cb in codebooks}
    if combine:
        chans = sorted(codebooks, key=channel_sort_key)
    else:
        if channel is None:
            if len(codebooks) != 1:
                raise ValueError("pick a channel when not combining several codebooks")
            channel = next(iter(codebooks))
        if channel not in codebooks:
            raise KeyError(f"no codebook for channel {channel!r}")
        chans = [channel]
    if not chans:
        raise ValueError("no codebooks given")
    feats = np.zeros((len(ds.clips), sum(codebooks[c].d for c in chans)))
    col = 0
    for ch in chans:
        cb = codebooks[ch]
        feats[:, col:col + cb.d] = channel_histograms(ds, cb, normalize)
        col += cb.d
    return ds.with_features(feats)


def channel_histograms(ds, cb, normalize=True):
    """(n_clips, d) histogram matrix for one channel, quantized in one pass."""
    blocks = []
    for clip in ds.clips:
        if cb.channel not in clip.descriptors:
            raise KeyError(f"clip {clip.clip_id} has no channel {cb.channel!r}")
        blocks.append(np.asarray(clip.descriptors[cb.channel], dtype=float).reshape(-1, cb.dim))
    counts = np.array([len(b) for b in blocks], dtype=np.int64)
    out = np.zeros((len(blocks), cb.d))
    if counts.sum() == 0:
        return out
    idx, _ = nearest_centroid(np.concatenate(blocks), cb.centroids)
    owner = np.repeat(np.arange(len(blocks)), counts)
    np.add.at(out, (owner, idx), 1.0)
    if normalize:
        nz = counts > 0
        out[nz] /= counts[nz, None]
    return out
