"""Linear SVMs trained from scratch.

Binary problems minimise ``lam * ||w||^2 + mean(max(0, 1 - y (w.x + b)))``
with an unregularised bias. The solver is SMO on the dual (maximal-violating
pair with second-order working-set selection), which is deterministic and
stops on a KKT gap, so the final primal objective is within ``tol`` of the
optimum.
"""

import json
import warnings
from dataclasses import dataclass, field

import numba
import numpy as np

GRAM_LIMIT = 8000
TAU = 1e-12


@dataclass
class TrainConfig:
    lam: float = 0.01
    epochs: int = 200
    tol: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lambda must be > 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.tol > 0:
            raise ValueError("tol must be > 0")


@dataclass(eq=False)
class LinearModel:
    w: np.ndarray
    b: float
    lam: float
    objective: float = float("nan")
    degenerate: bool = False
    converged: bool = True
    # dual objective (minimisation form) after every epoch of n solver steps
    history: tuple = field(default=(), repr=False)

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=float)
        self.b = float(self.b)
        if not np.isfinite(self.w).all() or not np.isfinite(self.b):
            raise ValueError("model has non-finite parameters")
        if not self.lam > 0:
            raise ValueError("lambda must be > 0")

    @property
    def dim(self):
        return self.w.shape[0]

    def decision(self, X):
        X = np.asarray(X, dtype=float)
        if X.shape[-1] != self.dim:
            raise ValueError(f"feature dim {X.shape[-1]} does not match model dim {self.dim}")
        return X @ self.w + self.b

    def to_dict(self):
        return {"w": self.w.tolist(), "b": self.b, "lambda": self.lam}

    @classmethod
    def from_dict(cls, d):
        return cls(w=np.asarray(d["w"], dtype=float), b=d["b"], lam=d["lambda"])


@dataclass(eq=False)
class MultiClassModel:
    models: list
    class_order: list

    def __post_init__(self):
        if len(set(self.class_order)) != len(self.class_order):
            raise ValueError("class_order has duplicates")
        if len(self.models) != len(self.class_order):
            raise ValueError("one model per class required")
        dims = {m.dim for m in self.models}
        if len(dims) > 1:
            raise ValueError("models disagree on feature dim")

    @property
    def dim(self):
        return self.models[0].dim

    @property
    def W(self):
        return np.stack([m.w for m in self.models])

    @property
    def bias(self):
        return np.array([m.b for m in self.models])

    def decision(self, X):
        X = np.asarray(X, dtype=float)
        if X.shape[-1] != self.dim:
            raise ValueError(f"feature dim {X.shape[-1]} does not match model dim {self.dim}")
        return X @ self.W.T + self.bias

    def to_dict(self):
        order = [c.item() if isinstance(c, np.generic) else c for c in self.class_order]
        return {"class_order": order, "models": [m.to_dict() for m in self.models]}

    @classmethod
    def from_dict(cls, d):
        return cls(models=[LinearModel.from_dict(m) for m in d["models"]],
                   class_order=list(d["class_order"]))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def objective(w, b, X, y, lam):
    """Primal objective ``lam ||w||^2 + mean hinge``."""
    margins = y * (X @ w + b)
    return float(lam * (w @ w) + np.maximum(0.0, 1.0 - margins).mean())


def score(m, x):
    """Signed margin ``w.x + b``."""
    x = np.asarray(x, dtype=float)
    if x.shape != (m.dim,):
        raise ValueError(f"feature dim {x.shape} does not match model dim {m.dim}")
    return float(x @ m.w + m.b)


@numba.njit(cache=True)
def _kernel_row(K, X, i):
    if K.shape[0] > 0:
        return K[i]
    return X @ X[i]


@numba.njit(cache=True)
def _dcd(X, y, C, eps, max_epochs, seed, with_bias):
    """Cyclic dual coordinate descent (random order per epoch).

    With ``with_bias`` a constant 1 is appended to every row, so the bias is
    regularised; the result only serves as a warm start in that mode.
    """
    n, d = X.shape
    np.random.seed(seed)
    alpha = np.zeros(n)
    w = np.zeros(d)
    wb = 0.0
    extra = 1.0 if with_bias else 0.0
    qd = np.empty(n)
    for t in range(n):
        qd[t] = X[t] @ X[t] + extra
    order = np.arange(n)
    trace = []
    converged = False
    for _ in range(max_epochs):
        np.random.shuffle(order)
        worst = 0.0
        for k in range(n):
            t = order[k]
            g = y[t] * (X[t] @ w + wb * extra) - 1.0
            pg = g
            if alpha[t] <= 0.0:
                pg = min(g, 0.0)
            elif alpha[t] >= C:
                pg = max(g, 0.0)
            if abs(pg) > worst:
                worst = abs(pg)
            if pg != 0.0:
                q = qd[t] if qd[t] > 0 else TAU
                old = alpha[t]
                alpha[t] = min(max(old - g / q, 0.0), C)
                step = (alpha[t] - old) * y[t]
                w += step * X[t]
                wb += step * extra
        f = 0.5 * (w @ w + wb * wb) - alpha.sum()
        trace.append(f)
        if worst < eps:
            converged = True
            break
    return alpha, converged, trace


@numba.njit(cache=True)
def _full_gradient(X, y, alpha):
    w = (alpha * y) @ X
    return w, y * (X @ w) - 1.0


@numba.njit(cache=True)
def _smo(K, X, y, C, eps, max_iter, log_every, alpha):
    """SMO for min 0.5 a'Qa - sum(a), 0<=a<=C, y'a=0, from a feasible ``alpha``.

    Working pairs follow LIBSVM's second-order selection with shrinking;
    shrunk gradients are rebuilt from w, which is cheap for a linear kernel.
    Ties keep the last index seen, so the run is fully deterministic.
    """
    n = y.shape[0]
    w, G = _full_gradient(X, y, alpha)
    diag = np.empty(n)
    for t in range(n):
        diag[t] = K[t, t] if K.shape[0] > 0 else X[t] @ X[t]
    trace = [0.5 * (w @ w) - alpha.sum()]
    act = np.arange(n)
    na = n
    period = min(n, 1000)
    counter = period
    unshrunk = False
    it = 0
    converged = False
    while it < max_iter:
        counter -= 1
        if counter == 0:
            counter = period
            g1 = -np.inf
            g2 = -np.inf
            for k in range(na):
                t = act[k]
                if y[t] > 0:
                    if alpha[t] < C:
                        g1 = max(g1, -G[t])
                    if alpha[t] > 0:
                        g2 = max(g2, G[t])
                else:
                    if alpha[t] < C:
                        g2 = max(g2, -G[t])
                    if alpha[t] > 0:
                        g1 = max(g1, G[t])
            if not unshrunk and g1 + g2 <= eps * 10:
                unshrunk = True
                w, G = _full_gradient(X, y, alpha)
                act = np.arange(n)
                na = n
            k = 0
            while k < na:
                t = act[k]
                shrink = False
                if alpha[t] >= C:
                    shrink = -G[t] > g1 if y[t] > 0 else -G[t] > g2
                elif alpha[t] <= 0:
                    shrink = G[t] > g2 if y[t] > 0 else G[t] > g1
                if shrink:
                    na -= 1
                    act[k] = act[na]
                    act[na] = t
                else:
                    k += 1
        gmax = -np.inf
        i = -1
        for k in range(na):
            t = act[k]
            if y[t] > 0:
                if alpha[t] < C and -G[t] >= gmax:
                    gmax = -G[t]
                    i = t
            elif alpha[t] > 0 and G[t] >= gmax:
                gmax = G[t]
                i = t
        gmax2 = -np.inf
        j = -1
        if i >= 0:
            Ki = _kernel_row(K, X, i)
            best = np.inf
            for k in range(na):
                t = act[k]
                if y[t] > 0:
                    if alpha[t] <= 0:
                        continue
                    v = G[t]
                else:
                    if alpha[t] >= C:
                        continue
                    v = -G[t]
                if v >= gmax2:
                    gmax2 = v
                gd = gmax + v
                if gd > 0:
                    quad = diag[i] + diag[t] - 2.0 * Ki[t]
                    if quad <= 0:
                        quad = TAU
                    od = -(gd * gd) / quad
                    if od <= best:
                        best = od
                        j = t
        if i < 0 or j < 0 or gmax + gmax2 < eps:
            if na < n:
                # optimal on the active set: check everything before stopping
                w, G = _full_gradient(X, y, alpha)
                act = np.arange(n)
                na = n
                unshrunk = True
                counter = period
                continue
            converged = True
            break
        Kj = _kernel_row(K, X, j)
        ai_old = alpha[i]
        aj_old = alpha[j]
        qij = y[i] * y[j] * Ki[j]
        if y[i] != y[j]:
            quad = diag[i] + diag[j] + 2.0 * qij
            if quad <= 0:
                quad = TAU
            delta = (-G[i] - G[j]) / quad
            diff = alpha[i] - alpha[j]
            alpha[i] += delta
            alpha[j] += delta
            if diff > 0:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = diff
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = C - diff
            else:
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = -diff
                if alpha[j] > C:
                    alpha[j] = C
                    alpha[i] = C + diff
        else:
            quad = diag[i] + diag[j] - 2.0 * qij
            if quad <= 0:
                quad = TAU
            delta = (G[i] - G[j]) / quad
            tot = alpha[i] + alpha[j]
            alpha[i] -= delta
            alpha[j] += delta
            if tot > C:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = tot - C
                if alpha[j] > C:
                    alpha[j] = C
                    alpha[i] = tot - C
            else:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = tot
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = tot
        dai = (alpha[i] - ai_old) * y[i]
        daj = (alpha[j] - aj_old) * y[j]
        for k in range(na):
            t = act[k]
            G[t] += y[t] * (Ki[t] * dai + Kj[t] * daj)
        it += 1
        if it % log_every == 0:
            wl = (alpha * y) @ X
            trace.append(0.5 * (wl @ wl) - alpha.sum())
    if na < n:
        w, G = _full_gradient(X, y, alpha)
    # bias from free vectors, else the midpoint of the feasible interval
    ub = np.inf
    lb = -np.inf
    total = 0.0
    nfree = 0
    for t in range(n):
        yg = y[t] * G[t]
        if alpha[t] >= C:
            if y[t] < 0:
                ub = min(ub, yg)
            else:
                lb = max(lb, yg)
        elif alpha[t] <= 0:
            if y[t] > 0:
                ub = min(ub, yg)
            else:
                lb = max(lb, yg)
        else:
            total += yg
            nfree += 1
    rho = total / nfree if nfree > 0 else 0.5 * (ub + lb)
    w = (alpha * y) @ X
    trace.append(0.5 * (w @ w) - alpha.sum())
    return alpha, -rho, it, converged, trace


def _balance(alpha, y, C):
    """Remove the y'alpha excess from the heavier class, smallest entries first.

    Entries sitting at the bound C are touched last, so most of the warm
    start's bound structure survives.
    """
    out = alpha.copy()
    excess = float(out @ y)
    if excess == 0.0:
        return out
    heavy = np.flatnonzero(np.sign(y) == np.sign(excess))
    excess = abs(excess)
    for t in heavy[np.argsort(out[heavy] >= C, kind="stable")]:
        take = min(out[t], excess)
        out[t] -= take
        excess -= take
        if excess <= 0.0:
            break
    return out


def prepare_gram(X, gram):
    X = np.ascontiguousarray(X, dtype=float)
    if gram is None:
        gram = X @ X.T if len(X) <= GRAM_LIMIT else np.zeros((0, 0))
    return X, np.ascontiguousarray(gram, dtype=float)


def train_binary(features, labels, cfg=None, fit_intercept=True, gram=None):
    """Train one linear SVM on labels in {-1, +1}.

    Input containing a single class yields a constant model (w = 0, bias
    +/-1 towards the present class) flagged ``degenerate`` with a warning.
    """
    cfg = cfg or TrainConfig()
    X = np.asarray(features, dtype=float)
    y = np.asarray(labels, dtype=float)
    if X.ndim != 2 or len(X) == 0:
        raise ValueError("train_binary needs a non-empty 2-D feature matrix")
    if len(y) != len(X):
        raise ValueError("one label per feature row required")
    if not np.isin(y, (-1.0, 1.0)).all():
        raise ValueError("labels must be -1 or +1")
    if not np.isfinite(X).all():
        raise ValueError("features contain non-finite values")
    n, dim = X.shape
    if np.all(y == y[0]):
        warnings.warn(f"only class {int(y[0]):+d} present; returning constant model", RuntimeWarning,
                      stacklevel=2)
        b = float(y[0]) if fit_intercept else 0.0
        w = np.zeros(dim)
        return LinearModel(w=w, b=b, lam=cfg.lam, objective=objective(w, b, X, y, cfg.lam),
                           degenerate=True)
    X = np.ascontiguousarray(X)
    C = 1.0 / (2.0 * cfg.lam * n)
    seed = int(cfg.seed) % (2 ** 32)
    if fit_intercept:
        warm, _, _ = _dcd(X, y, C, 1e-2, 20, seed, True)
        X, K = prepare_gram(X, gram)
        alpha, b, it, converged, trace = _smo(K, X, y, C, cfg.tol, cfg.epochs * n, n,
                                              _balance(warm, y, C))
    else:
        alpha, converged, trace = _dcd(X, y, C, cfg.tol, cfg.epochs, seed, False)
        b, it = 0.0, len(trace)
    w = (alpha * y) @ X
    if not converged:
        warnings.warn(f"SVM solver stopped after {it} iterations without meeting tol={cfg.tol}",
                      RuntimeWarning, stacklevel=2)
    return LinearModel(w=w, b=float(b), lam=cfg.lam, objective=objective(w, b, X, y, cfg.lam),
                       converged=bool(converged), history=tuple(trace))


def train_one_vs_all(features, class_labels, cfg=None, class_order=None):
    """One binary model per class, that class positive and the rest negative."""
    cfg = cfg or TrainConfig()
    X = np.asarray(features, dtype=float)
    labels = list(class_labels)
    if class_order is None:
        class_order = sorted(set(labels))
    class_order = list(class_order)
    if len(set(labels)) < 2:
        raise ValueError("one-vs-all needs at least two distinct classes")
    unknown = set(labels) - set(class_order)
    if unknown:
        raise ValueError(f"labels outside class_order: {sorted(unknown)}")
    X, K = prepare_gram(X, None)
    lab = np.array([class_order.index(c) for c in labels])
    models = []
    for k in range(len(class_order)):
        y = np.where(lab == k, 1.0, -1.0)
        models.append(train_binary(X, y, cfg, gram=K))
    return MultiClassModel(models=models, class_order=class_order)


def predict(m, x):
    """Return ``(class, scores)``; ties go to the earliest class in ``class_order``."""
    x = np.asarray(x, dtype=float)
    if x.shape != (m.dim,):
        raise ValueError(f"feature dim {x.shape} does not match model dim {m.dim}")
    s = m.decision(x)
    return m.class_order[int(np.argmax(s))], s


def predict_batch(m, X):
    """Vectorised ``predict`` returning class indices and the score matrix."""
    s = m.decision(X)
    return np.argmax(s, axis=1), s
