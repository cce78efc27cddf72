"""Diagonal Gaussian mixtures on class residuals, with EBIC model selection.

Each coarse class is centred on its training mean and a diagonal mixture is
fitted to the residuals. The number of components is picked by EBIC among
fits whose hard partition respects a minimum subclass size.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

VAR_FLOOR = 1e-6
LOG_2PI = np.log(2.0 * np.pi)


@dataclass
class GmmModel:
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    center: np.ndarray
    loglik: float
    trace: list = field(default_factory=list)

    @property
    def K(self) -> int:
        return len(self.weights)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def n_params(self) -> int:
        return (self.K - 1) + 2 * self.K * self.dim

    def log_joint(self, residuals: np.ndarray, exact: bool = False) -> np.ndarray:
        """log pi_j + log N(r | mean_j, diag var_j), shape (n, K).

        The default expands the quadratic form into matrix products; ``exact``
        uses explicit differences so symmetric ties stay bit-exact.
        """
        r = np.atleast_2d(residuals)
        prec = 1.0 / self.variances
        if exact:
            diff = r[:, None, :] - self.means[None, :, :]
            quad = np.sum(diff * diff * prec[None], axis=2)
        else:
            quad = ((r * r) @ prec.T - 2.0 * r @ (self.means * prec).T
                    + np.sum(self.means ** 2 * prec, axis=1)[None])
            quad = np.maximum(quad, 0.0)
        logdet = np.sum(np.log(self.variances), axis=1)
        return np.log(self.weights)[None] - 0.5 * (quad + logdet[None] + self.dim * LOG_2PI)

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Hard subclass of raw points x (the class center is subtracted here)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if not np.all(np.isfinite(x)):
            raise ValueError("non-finite input to hard assignment")
        # argmax returns the first maximiser, i.e. ties go to the smallest j
        return np.argmax(self.log_joint(x - self.center, exact=True), axis=1)

    def to_dict(self) -> dict:
        return {
            "K": self.K,
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "variances": self.variances.tolist(),
            "center": self.center.tolist(),
            "loglik": self.loglik,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GmmModel":
        return cls(np.asarray(d["weights"], float), np.asarray(d["means"], float),
                   np.asarray(d["variances"], float), np.asarray(d["center"], float),
                   float(d["loglik"]))


def class_center(x: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if len(x) == 0:
        raise ValueError("empty class")
    return x.mean(axis=0)


def _kmeanspp(r, K, rng):
    n = len(r)
    centers = [r[rng.integers(n)]]
    d2 = np.sum((r - centers[0]) ** 2, axis=1)
    for _ in range(1, K):
        total = d2.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = rng.choice(n, p=d2 / total)
        centers.append(r[idx])
        d2 = np.minimum(d2, np.sum((r - r[idx]) ** 2, axis=1))
    return np.stack(centers)


def _em(r, K, rng, max_iter, tol):
    n, D = r.shape
    means = _kmeanspp(r, K, rng)
    variances = np.tile(np.maximum(r.var(axis=0), VAR_FLOOR), (K, 1))
    weights = np.full(K, 1.0 / K)
    model = GmmModel(weights, means, variances, np.zeros(D), -np.inf)
    trace = []
    for _ in range(max_iter):
        lj = model.log_joint(r)
        norm = logsumexp(lj, axis=1)
        ll = float(norm.sum())
        trace.append(ll)
        if len(trace) > 1 and (trace[-1] - trace[-2]) / n < tol:
            break
        resp = np.exp(lj - norm[:, None])
        nk = resp.sum(axis=0)
        # a component that lost all mass keeps its previous parameters
        alive = nk > 1e-12
        w = nk / n
        mu = np.where(alive[:, None], (resp.T @ r) / np.maximum(nk, 1e-300)[:, None], model.means)
        sq = resp.T @ (r * r) / np.maximum(nk, 1e-300)[:, None] - mu * mu
        var = np.where(alive[:, None], np.maximum(sq, VAR_FLOOR), model.variances)
        w = np.maximum(w, 1e-300)
        model = GmmModel(w / w.sum(), mu, var, np.zeros(D), ll)
    else:
        trace.append(float(logsumexp(model.log_joint(r), axis=1).sum()))
    model.loglik = trace[-1]
    model.trace = trace
    return model


def fit_diag_gmm(residuals: np.ndarray, K: int, seed: int = 0, n_init: int = 3,
                 max_iter: int = 200, tol: float = 1e-6, center=None) -> GmmModel:
    """Fit a K-component diagonal mixture to residuals by EM.

    Means are seeded k-means++-style; the best of ``n_init`` restarts (by
    final log-likelihood) is kept. EM stops when the per-sample log-likelihood
    gain drops below ``tol`` or after ``max_iter`` iterations. Variances are
    floored at ``VAR_FLOOR``.

    All-identical data yields a single component with floored variance.
    """
    r = np.atleast_2d(np.asarray(residuals, dtype=float))
    n, D = r.shape
    if K < 1:
        raise ValueError("K must be >= 1")
    if n < K:
        raise ValueError(f"need n >= K, got n={n}, K={K}")
    center = np.zeros(D) if center is None else np.asarray(center, float)
    if np.all(r == r[0]):
        model = GmmModel(np.ones(1), r[:1].copy(), np.full((1, D), VAR_FLOOR), center, 0.0)
        model.loglik = float(logsumexp(model.log_joint(r), axis=1).sum())
        model.trace = [model.loglik]
        return model
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(n_init if K > 1 else 1):
        m = _em(r, K, rng, max_iter, tol)
        if best is None or m.loglik > best.loglik:
            best = m
    best.center = center
    return best


def ebic_from_loglik(loglik: float, n_params: int, n: int, dim: int, gamma: float = 0.5) -> float:
    return -2.0 * loglik + n_params * np.log(n) + 2.0 * gamma * n_params * np.log(dim)


def ebic_score(model: GmmModel, n: int, gamma: float = 0.5) -> float:
    """Extended BIC, lower is better. ``p = (K-1) + 2KD`` free parameters."""
    if n < 2:
        raise ValueError("EBIC needs n >= 2")
    return ebic_from_loglik(model.loglik, model.n_params, n, model.dim, gamma)


@dataclass
class Selection:
    K: int
    model: GmmModel
    table: list  # rows: {"K", "ebic", "loglik", "min_size", "admissible"}


def select_num_components(residuals, K_max: int = 6, gamma: float = 0.5, min_size: int = 50,
                          seed: int = 0, center=None) -> Selection:
    """Fit K = 1..K_max and keep the EBIC-best fit whose smallest subclass >= min_size.

    K = 1 is always admissible. Candidates with K > n are skipped.
    """
    r = np.atleast_2d(np.asarray(residuals, dtype=float))
    n = len(r)
    if K_max < 1:
        raise ValueError("K_max must be >= 1")
    table = []
    best = None
    for K in range(1, min(K_max, n) + 1):
        m = fit_diag_gmm(r, K, seed=seed + 7919 * K, center=center)
        labels = np.argmax(m.log_joint(r, exact=True), axis=1)
        sizes = np.bincount(labels, minlength=K)
        smallest = int(sizes.min())
        ok = K == 1 or smallest >= min_size
        score = ebic_score(m, n, gamma) if n >= 2 else 0.0
        table.append({"K": K, "ebic": float(score), "loglik": float(m.loglik),
                      "min_size": smallest, "admissible": bool(ok)})
        if ok and (best is None or score < best[0]):
            best = (score, K, m)
    _, K, model = best
    return Selection(K, model, table)


def hard_assign(x1: np.ndarray, model: GmmModel) -> np.ndarray:
    return model.predict(x1)


def subclass_weights(labels: np.ndarray, K: int | None = None) -> np.ndarray:
    """Empirical weights n_{c,k} / n_c from the hard labels of one class."""
    labels = np.asarray(labels, dtype=int)
    if labels.size == 0:
        raise ValueError("empty class")
    counts = np.bincount(labels, minlength=K or 0)
    return counts / counts.sum()


@dataclass
class SubclassFit:
    """Per-class selected mixtures and hard labels for a whole dataset."""

    models: dict
    selections: dict
    labels: np.ndarray

    def K(self, c) -> int:
        return self.models[c].K

    def pairs(self) -> list:
        return [(c, k) for c in sorted(self.models) for k in range(self.models[c].K)]

    def weights(self, y) -> dict:
        return {c: subclass_weights(self.labels[y == c], self.models[c].K) for c in sorted(self.models)}

    def split_summary(self, y) -> dict:
        """Counts mirroring an EBIC split table: base classes, subclasses, unsplit, sizes."""
        sizes = {c: np.bincount(self.labels[y == c], minlength=self.models[c].K) for c in self.models}
        unsplit = [c for c in self.models if self.models[c].K == 1]
        split = [c for c in self.models if self.models[c].K > 1]
        return {
            "B": len(self.models),
            "K": int(sum(m.K for m in self.models.values())),
            "n_unsplit": len(unsplit),
            "unsplit_max": int(max((sizes[c].sum() for c in unsplit), default=0)),
            "split_min": int(min((sizes[c].sum() for c in split), default=0)),
            "min_n_ck_split": int(min((sizes[c].min() for c in split), default=0)),
        }


def fit_subclasses(x: np.ndarray, y: np.ndarray, K_max: int = 6, gamma: float = 0.5,
                   min_size: int = 50, seed: int = 0) -> SubclassFit:
    """Induce hard subclasses for every class of a labelled set."""
    labels = np.zeros(len(y), dtype=int)
    models, selections = {}, {}
    for c in sorted(int(v) for v in np.unique(y)):
        mask = y == c
        mu = class_center(x[mask])
        sel = select_num_components(x[mask] - mu, K_max=K_max, gamma=gamma, min_size=min_size,
                                    seed=seed + 104729 * c, center=mu)
        models[c] = sel.model
        selections[c] = sel
        labels[mask] = sel.model.predict(x[mask])
    return SubclassFit(models, selections, labels)


def coarse_fit(x: np.ndarray, y: np.ndarray) -> SubclassFit:
    """Single-component fit per class: every sample gets subclass 0."""
    models, selections = {}, {}
    for c in sorted(int(v) for v in np.unique(y)):
        xc = x[y == c]
        mu = class_center(xc)
        m = fit_diag_gmm(xc - mu, 1, center=mu)
        models[c] = m
        selections[c] = Selection(1, m, [])
    return SubclassFit(models, selections, np.zeros(len(y), dtype=int))
