"""Latent-emotion behavior model.

Each behavior class owns a weight set scoring a (feature, emotion
configuration) pair as

    w_x . x  +  sum_l e_l * (a_l s_l(x) + b_l)  +  sum_{l<m} w_pair[l,m][2 e_l + e_m]

where s_l(x) is the emotion bank's margin. The class score is the maximum
over all 2^K binary configurations; enumeration is exact and ties go to the
lexicographically smallest configuration.

Training is one-vs-all. Per class the objective is

    F(W) = lam ||W||^2 + mean_j max(0, 1 - y_j f_j(W))

with f_j = W . psi(x_j, e_j) for positives (latent e_j held fixed) and
f_j = max_e W . psi(x_j, e) for negatives. Coordinate descent alternates
re-inferring e_j for positives with a convex descent on W.
"""

import itertools
import json
import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numba
import numpy as np
from scipy.optimize import minimize

from .emotion import EmotionClassifierBank
from .svm import TrainConfig, train_binary

SCHEMA = 1
INIT_MODES = ("behavior-inherited", "bank-predicted")
MAX_K = 20


@lru_cache(maxsize=None)
def _tables(k):
    if not 1 <= k <= MAX_K:
        raise ValueError(f"exact inference supports 1 <= K <= {MAX_K}, got {k}")
    configs = np.array(list(itertools.product((0, 1), repeat=k)), dtype=np.int8).reshape(-1, k)
    pairs = [(l, m) for l in range(k) for m in range(l + 1, k)]
    if pairs:
        states = np.stack([2 * configs[:, l] + configs[:, m] for l, m in pairs], axis=1)
    else:
        states = np.zeros((len(configs), 0), dtype=np.int8)
    configs.setflags(write=False)
    states.setflags(write=False)
    return configs, tuple(pairs), states.astype(np.int64)


def configurations(k):
    """All 2^k binary configurations in lexicographic order."""
    return _tables(k)[0]


def pair_list(k):
    return _tables(k)[1]


def config_index(e):
    """Row of ``configurations(len(e))`` holding ``e``."""
    e = np.asarray(e, dtype=np.int64)
    return int((e << np.arange(len(e) - 1, -1, -1)).sum())


@dataclass(eq=False)
class LatentWeights:
    w_x: np.ndarray
    w_e: np.ndarray
    w_pair: np.ndarray

    def __post_init__(self):
        self.w_x = np.asarray(self.w_x, dtype=float).reshape(-1)
        self.w_e = np.asarray(self.w_e, dtype=float).reshape(-1, 2)
        k = len(self.w_e)
        self.w_pair = np.asarray(self.w_pair, dtype=float).reshape(k * (k - 1) // 2, 4)
        for name in ("w_x", "w_e", "w_pair"):
            if not np.isfinite(getattr(self, name)).all():
                raise ValueError(f"{name} has non-finite entries")

    @property
    def K(self):
        return len(self.w_e)

    @property
    def dim(self):
        return len(self.w_x)

    @classmethod
    def zeros(cls, dim, k):
        return cls(np.zeros(dim), np.zeros((k, 2)), np.zeros((k * (k - 1) // 2, 4)))

    def flat(self):
        return np.concatenate([self.w_x, self.w_e.ravel(), self.w_pair.ravel()])

    @classmethod
    def from_flat(cls, v, dim, k):
        v = np.asarray(v, dtype=float)
        return cls(v[:dim], v[dim:dim + 2 * k], v[dim + 2 * k:])

    def pair_table(self):
        """Full K x K x 4 view; entries with l >= m are zero."""
        out = np.zeros((self.K, self.K, 4))
        for p, (l, m) in enumerate(pair_list(self.K)):
            out[l, m] = self.w_pair[p]
        return out

    def to_dict(self):
        return {"w_x": self.w_x.tolist(), "w_e": self.w_e.tolist(),
                "w_pair": {f"{l},{m}": self.w_pair[p].tolist()
                           for p, (l, m) in enumerate(pair_list(self.K))}}

    @classmethod
    def from_dict(cls, d):
        w_e = np.asarray(d["w_e"], dtype=float)
        k = len(w_e)
        pairs = pair_list(k)
        extra = set(d["w_pair"]) - {f"{l},{m}" for l, m in pairs}
        if extra:
            raise ValueError(f"w_pair keys outside l<m: {sorted(extra)}")
        w_pair = np.array([d["w_pair"][f"{l},{m}"] for l, m in pairs], dtype=float)
        return cls(d["w_x"], w_e, w_pair.reshape(len(pairs), 4))


def _scores(bank, X):
    return bank.scores(X) if hasattr(bank, "scores") else np.atleast_2d(np.asarray(bank, dtype=float))


def joint_feature(x, e, bank):
    """Flat joint feature matching ``LatentWeights.flat`` layout.

    ``bank`` may also be the precomputed emotion-score vector s(x).
    """
    x = np.asarray(x, dtype=float)
    e = np.asarray(e)
    s = _scores(bank, x[None, :])[0]
    if s.shape != e.shape:
        raise ValueError(f"emotion vector has {e.shape[0]} entries, bank has {s.shape[0]}")
    if not np.isin(e, (0, 1)).all():
        raise ValueError("emotion configuration must be binary")
    k = len(e)
    psi2 = np.stack([e * s, e.astype(float)], axis=1).ravel()
    psi3 = np.zeros((k * (k - 1) // 2, 4))
    for p, (l, m) in enumerate(pair_list(k)):
        psi3[p, 2 * int(e[l]) + int(e[m])] = 1.0
    return np.concatenate([x, psi2, psi3.ravel()])


def _check(W, x, bank):
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or len(x) != W.dim:
        raise ValueError(f"feature dim {x.shape} does not match model dim {W.dim}")
    if hasattr(bank, "dim") and bank.dim != W.dim:
        raise ValueError("bank and model disagree on feature dim")
    return x


def score_configuration(W, x, e, bank):
    """Sum of the raw-feature, per-emotion and pairwise terms."""
    x = _check(W, x, bank)
    e = np.asarray(e)
    if e.shape != (W.K,):
        raise ValueError(f"emotion vector must have {W.K} entries")
    s = _scores(bank, x[None, :])[0]
    total = float(W.w_x @ x)
    total += float(np.sum(e * (W.w_e[:, 0] * s + W.w_e[:, 1])))
    for p, (l, m) in enumerate(pair_list(W.K)):
        total += W.w_pair[p, 2 * int(e[l]) + int(e[m])]
    return total


def all_config_scores(W, X, S):
    """(n, 2^K) scores of every configuration for every row of ``X``."""
    configs, _, states = _tables(W.K)
    base = X @ W.w_x
    unary = S * W.w_e[:, 0] + W.w_e[:, 1]
    pair = W.w_pair[np.arange(states.shape[1]), states].sum(axis=1) if states.size else 0.0
    return base[:, None] + unary @ configs.T + pair


def infer_batch(W, X, S):
    """Best configuration index and its score for each row."""
    table = all_config_scores(W, X, S)
    idx = np.argmax(table, axis=1)
    return idx, table[np.arange(len(table)), idx]


def infer_best_emotions(W, x, bank):
    """Exact argmax over all binary emotion configurations."""
    x = _check(W, x, bank)
    s = _scores(bank, x[None, :])
    idx, best = infer_batch(W, x[None, :], s)
    return configurations(W.K)[idx[0]].copy(), float(best[0])


@dataclass
class LatentConfig:
    lam: float = 0.01
    outer_iters: int = 10
    inner: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=1000, tol=1e-6))
    init_mode: str = "behavior-inherited"
    temperatures: tuple = (0.05,)
    max_inner: int = 50
    tol: float = 1e-3
    freeze_pairs: bool = False
    freeze_latent: bool = False

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lambda must be > 0")
        if self.outer_iters < 1 or self.max_inner < 1 or not self.temperatures:
            raise ValueError("iteration counts must be >= 1")
        if self.init_mode not in INIT_MODES:
            raise ValueError(f"init_mode must be one of {INIT_MODES}")


@dataclass(eq=False)
class LatentModelSet:
    weights: list
    class_order: list
    bank: EmotionClassifierBank
    lam: float
    histories: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.weights) != len(self.class_order):
            raise ValueError("one weight set per class required")
        if len({(w.dim, w.K) for w in self.weights}) != 1:
            raise ValueError("weight sets disagree on dims")
        if self.weights[0].dim != self.bank.dim or self.weights[0].K != self.bank.K:
            raise ValueError("bank does not match weight dims")

    @property
    def dim(self):
        return self.weights[0].dim

    def to_dict(self):
        return {"schema": SCHEMA, "lambda": self.lam, "classes": list(self.class_order),
                "bank": self.bank.to_dict(), "models": [w.to_dict() for w in self.weights]}

    @classmethod
    def from_dict(cls, d):
        if d.get("schema") != SCHEMA:
            raise ValueError(f"unsupported latent model schema {d.get('schema')!r}")
        return cls([LatentWeights.from_dict(w) for w in d["models"]], list(d["classes"]),
                   EmotionClassifierBank.from_dict(d["bank"]), float(d["lambda"]))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


class _ClassProblem:
    """Objective for one class; W is handled as a flat vector."""

    def __init__(self, X, S, y, lam, k, free_pairs):
        self.X = np.ascontiguousarray(X, dtype=float)
        self.S = np.ascontiguousarray(S, dtype=float)
        self.y, self.lam, self.k = y, lam, k
        self.dim = X.shape[1]
        self.pos = np.flatnonzero(y > 0)
        self.neg = np.flatnonzero(y < 0)
        self.free_pairs = free_pairs
        configs, _, self.states = _tables(k)
        self.configs = configs.astype(float)
        self.n_params = self.dim + 2 * k + 4 * self.states.shape[1]

    def unpack(self, v):
        return LatentWeights.from_flat(v, self.dim, self.k)

    def psi(self, rows, cidx):
        """Joint features of examples ``rows`` at configuration indices ``cidx``."""
        e = self.configs[cidx].astype(float)
        s = self.S[rows]
        psi2 = np.stack([e * s, e], axis=2).reshape(len(rows), -1)
        n_pairs = self.states.shape[1]
        psi3 = np.zeros((len(rows), n_pairs, 4))
        if n_pairs:
            st = self.states[cidx]
            psi3[np.arange(len(rows))[:, None], np.arange(n_pairs), st] = 1.0
        return np.hstack([self.X[rows], psi2, psi3.reshape(len(rows), -1)])

    def margins(self, v, e_pos):
        """Signed margins y_j f_j plus the argmax configurations of negatives."""
        W = self.unpack(v)
        out = np.empty(len(self.y))
        table = all_config_scores(W, self.X, self.S)
        out[self.pos] = table[self.pos, e_pos]
        neg_idx = np.argmax(table[self.neg], axis=1)
        out[self.neg] = -table[self.neg, neg_idx]
        return out, neg_idx

    def value(self, v, e_pos):
        m, _ = self.margins(v, e_pos)
        return float(self.lam * v @ v + np.maximum(0.0, 1.0 - m).mean())

    def infer_pos(self, v):
        W = self.unpack(v)
        idx, _ = infer_batch(W, self.X[self.pos], self.S[self.pos])
        return idx


def _mask(prob):
    m = np.ones(prob.n_params)
    if not prob.free_pairs:
        m[prob.dim + 2 * prob.k:] = 0.0
    return m


@numba.njit(cache=True)
def _smoothed_kernel(v, X, S, configs, states, cidx, lam, tau, mask):
    n, dim = X.shape
    m_cfg, k = configs.shape
    n_pairs = states.shape[1]
    off_e = dim
    off_p = dim + 2 * k
    pair_cfg = np.zeros(m_cfg)
    for c in range(m_cfg):
        for p in range(n_pairs):
            pair_cfg[c] += v[off_p + 4 * p + states[c, p]]
    g = np.zeros(len(v))
    cfg_weight = np.zeros(m_cfg)
    scores = np.empty(m_cfg)
    u = np.empty(k)
    total = 0.0
    for j in range(n):
        base = 0.0
        for d in range(dim):
            base += X[j, d] * v[d]
        for l in range(k):
            u[l] = v[off_e + 2 * l] * S[j, l] + v[off_e + 2 * l + 1]
        c_fix = cidx[j]
        if c_fix >= 0:
            s = base + pair_cfg[c_fix]
            for l in range(k):
                s += configs[c_fix, l] * u[l]
            margin = s
        else:
            top = -np.inf
            for c in range(m_cfg):
                s = base + pair_cfg[c]
                for l in range(k):
                    s += configs[c, l] * u[l]
                scores[c] = s
                if s > top:
                    top = s
            acc = 0.0
            for c in range(m_cfg):
                scores[c] = np.exp((scores[c] - top) / tau)
                acc += scores[c]
            margin = -(top + tau * np.log(acc))
            for c in range(m_cfg):
                scores[c] /= acc
        z = (1.0 - margin) / tau
        if z > 0:
            total += tau * (z + np.log1p(np.exp(-z)))
            sig = 1.0 / (1.0 + np.exp(-z))
        else:
            total += tau * np.log1p(np.exp(z))
            sig = np.exp(z) / (1.0 + np.exp(z))
        # d loss / d score: -sig for a fixed positive, +sig spread by soft-max for a negative
        coef = -sig / n if c_fix >= 0 else sig / n
        for d in range(dim):
            g[d] += coef * X[j, d]
        if c_fix >= 0:
            cfg_weight[c_fix] += coef
            for l in range(k):
                if configs[c_fix, l] != 0.0:
                    g[off_e + 2 * l] += coef * S[j, l]
                    g[off_e + 2 * l + 1] += coef
        else:
            for l in range(k):
                pl = 0.0
                for c in range(m_cfg):
                    pl += scores[c] * configs[c, l]
                g[off_e + 2 * l] += coef * pl * S[j, l]
                g[off_e + 2 * l + 1] += coef * pl
            for c in range(m_cfg):
                cfg_weight[c] += coef * scores[c]
    for c in range(m_cfg):
        for p in range(n_pairs):
            g[off_p + 4 * p + states[c, p]] += cfg_weight[c]
    reg = 0.0
    for i in range(len(v)):
        reg += v[i] * v[i]
        g[i] = (g[i] + 2.0 * lam * v[i]) * mask[i]
    return lam * reg + total / n, g


def _smoothed(v, prob, cidx, tau, mask):
    """Objective with the hinge and the negatives' max replaced by soft versions at
    temperature ``tau``, plus its gradient. Both tend to the exact ones as tau -> 0."""
    return _smoothed_kernel(v, prob.X, prob.S, prob.configs, prob.states, cidx, prob.lam, tau, mask)


def _solve_fixed(prob, v, e_pos, cfg, start=None):
    """Descend F(W) with positives' configurations fixed; never increases F.

    The convex subproblem is minimised through a sequence of smoothed
    surrogates started at ``start`` (default ``v``); each candidate is kept
    only if it lowers the exact objective.
    """
    mask = _mask(prob)
    best, f_best = v, prob.value(v, e_pos)
    cidx = np.full(len(prob.y), -1, dtype=np.int64)
    cidx[prob.pos] = e_pos
    cur = v if start is None else start * mask
    f = prob.value(cur, e_pos)
    if f < f_best:
        best, f_best = cur, f
    for tau in cfg.temperatures:
        res = minimize(_smoothed, cur, args=(prob, cidx, tau, mask), jac=True, method="L-BFGS-B",
                       options={"maxiter": cfg.max_inner, "gtol": 1e-9, "ftol": 1e-12})
        cur = res.x * mask
        f = prob.value(cur, e_pos)
        if f < f_best:
            best, f_best = cur, f
    return best, f_best


def train_latent_class(X, S, y, e_init, cfg):
    """Coordinate descent for one binary problem; returns (weights, objective history)."""
    X = np.asarray(X, dtype=float)
    S = np.asarray(S, dtype=float)
    y = np.asarray(y, dtype=float)
    k = S.shape[1]
    if not (y > 0).any():
        raise ValueError("class has no positive examples")
    if not (y < 0).any():
        raise ValueError("class has no negative examples")
    prob = _ClassProblem(X, S, y, cfg.lam, k, not cfg.freeze_pairs)
    e_pos = np.array([config_index(e) for e in np.asarray(e_init)[prob.pos]], dtype=np.int64)
    if cfg.freeze_latent:
        return _train_frozen(prob, e_init, cfg)
    v = np.zeros(prob.n_params)
    history = [prob.value(v, e_pos)]
    start = _linear_start(prob, cfg)
    for _ in range(cfg.outer_iters):
        v, f = _solve_fixed(prob, v, e_pos, cfg, start)
        start = None
        if not np.isfinite(f):
            raise FloatingPointError("latent objective became non-finite")
        history.append(f)
        if history[-2] - f <= cfg.tol * max(1.0, history[-2]):
            break
        e_pos = prob.infer_pos(v)
    return prob.unpack(v), history


def _linear_start(prob, cfg):
    """Raw-feature SVM weights with the bias spread over the pair tables.

    Every configuration then scores the same, so this point is the plain
    linear classifier; it only seeds the first descent.
    """
    inner = TrainConfig(lam=cfg.lam, epochs=cfg.inner.epochs, tol=cfg.inner.tol, seed=cfg.inner.seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        sub = train_binary(prob.X, prob.y, inner)
    v = np.zeros(prob.n_params)
    v[:prob.dim] = sub.w
    n_pairs = prob.states.shape[1]
    if n_pairs and prob.free_pairs:
        v[prob.dim + 2 * prob.k:] = sub.b / n_pairs
    return v


def _train_frozen(prob, e_init, cfg):
    """Every example keeps its given configuration: a plain linear SVM."""
    rows = np.arange(len(prob.y))
    cidx = np.array([config_index(e) for e in np.asarray(e_init)], dtype=np.int64)
    feats = prob.psi(rows, cidx) * _mask(prob)
    inner = TrainConfig(lam=cfg.lam, epochs=cfg.inner.epochs, tol=cfg.inner.tol, seed=cfg.inner.seed)
    sub = train_binary(feats, prob.y, inner, fit_intercept=False)
    return prob.unpack(sub.w), [1.0, sub.objective]


def initial_emotions(E, S, mode):
    if mode == "behavior-inherited":
        return np.asarray(E, dtype=np.int8)
    if mode == "bank-predicted":
        return (np.asarray(S) > 0).astype(np.int8)
    raise ValueError(f"unknown init_mode {mode!r}")


def fit_latent(X, behaviors, E, bank, cfg=None, class_order=None):
    """Array-level training: ``behaviors`` are class labels, ``E`` ground-truth emotions."""
    cfg = cfg or LatentConfig()
    X = np.asarray(X, dtype=float)
    labels = list(behaviors)
    class_order = list(class_order) if class_order is not None else sorted(set(labels))
    S = bank.scores(X)
    e0 = initial_emotions(E, S, cfg.init_mode)
    weights, histories = [], []
    for c in class_order:
        y = np.array([1.0 if l == c else -1.0 for l in labels])
        if not (y > 0).any():
            raise ValueError(f"class {c!r} has no training examples")
        w, hist = train_latent_class(X, S, y, e0, cfg)
        weights.append(w)
        histories.append(hist)
    return LatentModelSet(weights, class_order, bank, cfg.lam, histories)


def train_latent(train, bank, cfg=None):
    """One-vs-all latent models for every behavior class of an encoded dataset."""
    names = list(train.behavior_names)
    labels = [names[b] for b in train.behaviors()]
    return fit_latent(train.features(), labels, train.emotions(), bank, cfg, class_order=names)


def latent_decision(models, X, fixed_e=False):
    """(n, classes) scores and (n, classes, K) best configurations.

    With ``fixed_e`` the configuration is the thresholded bank prediction
    instead of the per-class maximiser.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != models.dim:
        raise ValueError(f"feature dim {X.shape[-1]} does not match model dim {models.dim}")
    S = models.bank.scores(X)
    configs = configurations(models.bank.K)
    scores = np.empty((len(X), len(models.weights)))
    best = np.empty((len(X), len(models.weights), models.bank.K), dtype=np.int8)
    fixed = np.array([config_index(e) for e in (S > 0).astype(np.int64)]) if fixed_e else None
    for c, W in enumerate(models.weights):
        table = all_config_scores(W, X, S)
        idx = fixed if fixed_e else np.argmax(table, axis=1)
        scores[:, c] = table[np.arange(len(X)), idx]
        best[:, c] = configs[idx]
    return scores, best


def predict_latent(models, x, fixed_e=False):
    """Behavior label, per-class scores and per-class best emotion configurations."""
    x = np.asarray(x, dtype=float)
    if x.shape != (models.dim,):
        raise ValueError(f"feature dim {x.shape} does not match model dim {models.dim}")
    scores, best = latent_decision(models, x[None, :], fixed_e)
    return models.class_order[int(np.argmax(scores[0]))], scores[0], best[0]
