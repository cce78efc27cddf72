"""Generation fidelity, mode coverage, subclass validity and downstream metrics."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.special import logsumexp


class SingularCovarianceWarning(RuntimeWarning):
    pass


def _sqrtm_psd(c):
    w, V = np.linalg.eigh(c)
    return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T


def gaussian_frechet(real, gen, eps: float = 1e-8) -> float:
    """Frechet (2-Wasserstein) distance between Gaussian fits of two sample sets.

    ``|m1 - m2|^2 + tr(C1 + C2 - 2 (C1^1/2 C2 C1^1/2)^1/2)``; both roots
    come from symmetric eigendecompositions. Singular covariances get
    ``eps * I`` added and a :class:`SingularCovarianceWarning`.
    """
    a = np.atleast_2d(np.asarray(real, dtype=float))
    b = np.atleast_2d(np.asarray(gen, dtype=float))
    D = a.shape[1]
    if len(a) < D + 1 or len(b) < D + 1:
        raise ValueError(f"need at least D+1={D + 1} samples on each side")
    m1, m2 = a.mean(0), b.mean(0)
    c1 = np.atleast_2d(np.cov(a, rowvar=False))
    c2 = np.atleast_2d(np.cov(b, rowvar=False))
    for c in (c1, c2):
        if np.linalg.eigvalsh(c).min() <= 1e-12 * max(1.0, np.trace(c)):
            warnings.warn("singular covariance regularised", SingularCovarianceWarning)
            c += eps * np.eye(D)
    s1 = _sqrtm_psd(c1)
    mid = s1 @ c2 @ s1
    tr_cross = np.sum(np.sqrt(np.clip(np.linalg.eigvalsh(0.5 * (mid + mid.T)), 0.0, None)))
    val = float(np.sum((m1 - m2) ** 2) + np.trace(c1) + np.trace(c2) - 2.0 * tr_cross)
    return max(val, 0.0)


def mode_recall(gen, means, variances, radius: float = 2.0, min_share: float = 0.02) -> float:
    """Share of true modes hit by at least ``min_share`` of the generated points.

    A point hits a mode when its standardised distance
    ``|(x - mean) / std|`` is at most ``radius``.
    """
    gen = np.atleast_2d(np.asarray(gen, dtype=float))
    if len(gen) == 0:
        raise ValueError("no generated samples")
    hit = 0
    for mu, var in zip(means, variances):
        dist = np.linalg.norm((gen - np.asarray(mu)) / np.sqrt(np.asarray(var)), axis=1)
        if np.mean(dist <= radius) >= min_share:
            hit += 1
    return hit / len(means)


# --- downstream classification ---------------------------------------

def confusion(y_true, y_pred, classes):
    idx = {c: i for i, c in enumerate(classes)}
    m = np.zeros((len(classes), len(classes)), dtype=int)
    for t, p in zip(y_true, y_pred):
        m[idx[t], idx[p]] += 1
    return m


def balanced_accuracy(y_true, y_pred, classes=None) -> float:
    classes = sorted(set(np.asarray(y_true).tolist())) if classes is None else classes
    m = confusion(y_true, y_pred, classes)
    support = m.sum(axis=1)
    recall = np.diag(m)[support > 0] / support[support > 0]
    return float(recall.mean())


def macro_f1(y_true, y_pred, classes=None) -> float:
    classes = sorted(set(np.asarray(y_true).tolist())) if classes is None else classes
    m = confusion(y_true, y_pred, classes)
    tp = np.diag(m).astype(float)
    denom = m.sum(axis=0) + m.sum(axis=1)
    f1 = np.where(denom > 0, 2 * tp / np.maximum(denom, 1), 0.0)
    return float(f1.mean())


@dataclass
class RandomFeatures:
    """Fixed random Fourier features; lets a linear softmax model carve multi-modal classes."""

    W: np.ndarray
    b: np.ndarray

    @classmethod
    def make(cls, dim, n_features=256, bandwidth=1.0, seed=0):
        rng = np.random.default_rng(seed)
        return cls(rng.normal(0.0, 1.0 / bandwidth, size=(dim, n_features)),
                   rng.uniform(0.0, 2 * np.pi, size=n_features))

    def __call__(self, x):
        return np.sqrt(2.0 / self.W.shape[1]) * np.cos(x @ self.W + self.b)


@dataclass
class SoftmaxRegression:
    classes: list
    W: np.ndarray
    b: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    features: RandomFeatures = None
    n_iter: int = 0

    def _phi(self, x):
        z = (np.asarray(x, dtype=float) - self.mean) / self.std
        return z if self.features is None else self.features(z)

    def decision(self, x):
        return self._phi(x) @ self.W + self.b

    def predict(self, x):
        return np.asarray(self.classes)[np.argmax(self.decision(x), axis=1)]


def fit_softmax(x, y, features: str = "rff", n_features: int = 256, bandwidth: float = 1.0,
                l2: float = 1e-4, max_iter: int = 500, tol: float = 1e-6,
                seed: int = 0) -> SoftmaxRegression:
    """Multinomial logistic regression with an L2 penalty, fit by L-BFGS.

    Inputs are standardised with training statistics. With ``features="rff"``
    the model is linear in fixed random Fourier features of the standardised
    inputs; ``"linear"`` uses raw coordinates. Weights start at zero, so the
    fit is a deterministic function of the data and ``seed``.
    """
    x = np.asarray(x, dtype=float)
    classes = sorted(int(c) for c in np.unique(y))
    mean, std = x.mean(0), x.std(0) + 1e-12
    if features not in ("rff", "linear"):
        raise ValueError(f"unknown features {features!r}")
    rf = RandomFeatures.make(x.shape[1], n_features, bandwidth, seed) if features == "rff" else None
    model = SoftmaxRegression(classes, None, None, mean, std, rf)
    phi = model._phi(x)
    n, F = phi.shape
    C = len(classes)
    idx = {c: i for i, c in enumerate(classes)}
    target = np.array([idx[int(c)] for c in y])

    def fun(theta):
        W = theta[:F * C].reshape(F, C)
        b = theta[F * C:]
        logits = phi @ W + b
        lse = logsumexp(logits, axis=1)
        loss = np.mean(lse - logits[np.arange(n), target]) + 0.5 * l2 * np.sum(W * W)
        G = np.exp(logits - lse[:, None])
        G[np.arange(n), target] -= 1.0
        G /= n
        return loss, np.concatenate([(phi.T @ G + l2 * W).ravel(), G.sum(axis=0)])

    res = minimize(fun, np.zeros(F * C + C), jac=True, method="L-BFGS-B",
                   options={"maxiter": max_iter, "gtol": tol})
    model.W = res.x[:F * C].reshape(F, C)
    model.b = res.x[F * C:]
    model.n_iter = int(res.nit)
    return model


def train_downstream(train_x, train_y, test_x, test_y, seed: int = 0, **kw):
    """Fit the classifier on the (possibly augmented) train set; return (bAcc, macro-F1)."""
    missing = set(np.unique(test_y).tolist()) - set(np.unique(train_y).tolist())
    if missing:
        raise ValueError(f"classes absent from train set: {sorted(missing)}")
    clf = fit_softmax(train_x, train_y, seed=seed, **kw)
    pred = clf.predict(test_x)
    classes = sorted(set(np.asarray(test_y).tolist()))
    return balanced_accuracy(test_y, pred, classes), macro_f1(test_y, pred, classes)


# --- subclass structure ----------------------------------------------

def random_projection(dim: int, seed: int = 0, out_dim: int | None = None) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.normal(size=(dim, out_dim or dim)) / np.sqrt(dim)


def knn_purity(x, y, labels, k: int = 10, embedding=None) -> float:
    """Sample-weighted share of within-class k nearest neighbours with the same label.

    ``embedding`` is a matrix applied to ``x`` first (a seeded random
    projection at desk scale). Brute-force Euclidean search.
    """
    x = np.asarray(x, dtype=float)
    e = x if embedding is None else x @ embedding
    hits, total = 0, 0
    for c in np.unique(y):
        m = y == c
        if m.sum() < k + 1:
            raise ValueError(f"class {c} has fewer than k+1={k + 1} samples")
        ec, lc = e[m], np.asarray(labels)[m]
        sq = np.sum(ec * ec, axis=1)
        d2 = sq[:, None] + sq[None, :] - 2.0 * ec @ ec.T
        np.fill_diagonal(d2, np.inf)
        nn = np.argpartition(d2, k, axis=1)[:, :k]
        hits += int(np.sum(lc[nn] == lc[:, None]))
        total += len(lc) * k
    return hits / total


def matched_random_partition(y, labels, seed: int = 0) -> np.ndarray:
    """Shuffle subclass labels within each class, keeping per-subclass counts."""
    rng = np.random.default_rng(seed)
    out = np.array(labels, copy=True)
    for c in np.unique(y):
        idx = np.flatnonzero(y == c)
        out[idx] = rng.permutation(out[idx])
    return out


def random_partition_purity(y, labels) -> float:
    """Expected purity of a matched random partition (hypergeometric baseline)."""
    total, acc = 0, 0.0
    for c in np.unique(y):
        lc = np.asarray(labels)[y == c]
        n = len(lc)
        sizes = np.bincount(lc)
        acc += n * float(np.sum(sizes / n * (sizes - 1) / (n - 1)))
        total += n
    return acc / total
