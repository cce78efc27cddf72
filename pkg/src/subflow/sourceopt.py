"""Per-subclass Gaussian sources shaped by a directional/path-cap objective.

Every (class, subclass) pair owns a diagonal Gaussian source
``x0 = mu + exp(log_sigma) * z`` and a unit prototype direction. The
objective pulls normalised displacements ``u = (x1 - x0) / |x1 - x0|``
toward the prototype, penalises path lengths beyond a frozen per-subclass
cap with a squared softplus, and keeps the log-scales near zero.

Gradients are analytic; ``tests/test_sourceopt.py`` checks them against
central differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .optim import Adam

MIN_NORM = 1e-12


def softplus(a):
    return np.logaddexp(0.0, a)


def sigmoid(a):
    return 0.5 * (1.0 + np.tanh(0.5 * a))


def nearest_rank_quantile(values, q: float) -> float:
    """Nearest-rank quantile: the ceil(q*n)-th order statistic (1-based)."""
    v = np.sort(np.asarray(values, dtype=float).ravel())
    if v.size == 0:
        raise ValueError("quantile of an empty set")
    rank = max(1, math.ceil(q * v.size - 1e-12))
    return float(v[rank - 1])


@dataclass
class OptConfig:
    steps: int = 2500
    lambda_out: float = 1.0
    lambda_path: float = 0.1
    lambda_det: float = 0.1
    batch_size: int = 256
    lr: float = 1e-2
    seed: int = 0

    def validate(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if min(self.lambda_out, self.lambda_path, self.lambda_det) < 0:
            raise ValueError("loss weights must be >= 0")
        if self.batch_size < 1 or self.lr <= 0:
            raise ValueError("batch_size must be >= 1 and lr > 0")


@dataclass
class SourceParams:
    """Stacked source parameters; row s belongs to ``pairs[s]``."""

    pairs: list
    mu: np.ndarray
    log_sigma: np.ndarray
    proto_raw: np.ndarray
    cap: np.ndarray

    @property
    def sigma(self) -> np.ndarray:
        return np.exp(self.log_sigma)

    @property
    def prototype(self) -> np.ndarray:
        return self.proto_raw / np.linalg.norm(self.proto_raw, axis=1, keepdims=True)

    def index(self, c, k=0) -> int:
        return self.pairs.index((int(c), int(k)))

    def copy(self) -> "SourceParams":
        return SourceParams(list(self.pairs), self.mu.copy(), self.log_sigma.copy(),
                            self.proto_raw.copy(), self.cap.copy())

    def to_dict(self) -> dict:
        v = self.prototype
        return {
            f"{c},{k}": {"class": c, "subclass": k, "mu": self.mu[s].tolist(),
                         "log_sigma": self.log_sigma[s].tolist(), "prototype": v[s].tolist(),
                         "cap": float(self.cap[s])}
            for s, (c, k) in enumerate(self.pairs)
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SourceParams":
        items = sorted(d.values(), key=lambda e: (e["class"], e["subclass"]))
        return cls([(int(e["class"]), int(e["subclass"])) for e in items],
                   np.array([e["mu"] for e in items], float),
                   np.array([e["log_sigma"] for e in items], float),
                   np.array([e["prototype"] for e in items], float),
                   np.array([e["cap"] for e in items], float))


def sample_source(mu, log_sigma, z):
    z = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(z)):
        raise ValueError("non-finite noise")
    return mu + np.exp(log_sigma) * z


def compute_caps(x, y, labels, centers: dict, q: float = 0.99) -> dict:
    """Nearest-rank ``q``-quantile of distances to the class center, per subclass."""
    caps = {}
    for c in sorted(centers):
        in_c = y == c
        for k in np.unique(labels[in_c]):
            pts = x[in_c & (labels == k)]
            dist = np.linalg.norm(pts - centers[c], axis=1)
            caps[(int(c), int(k))] = nearest_rank_quantile(dist, q)
    return caps


# --- single-batch losses -----------------------------------------------

def loss_out(d, v) -> float:
    """Mean of 1 - <d/|d|, v>; displacements shorter than MIN_NORM are skipped."""
    d = np.atleast_2d(d)
    r = np.linalg.norm(d, axis=1)
    ok = r >= MIN_NORM
    if not ok.any():
        return 0.0
    u = d[ok] / r[ok, None]
    return float(np.mean(1.0 - u @ np.asarray(v, float)))


def count_skipped(d) -> int:
    return int(np.sum(np.linalg.norm(np.atleast_2d(d), axis=1) < MIN_NORM))


def loss_path(d, cap) -> float:
    if cap <= 0:
        raise ValueError("cap must be positive")
    r = np.linalg.norm(np.atleast_2d(d), axis=1)
    return float(np.mean(softplus(r / cap - 1.0) ** 2))


def loss_det(log_sigma) -> float:
    ls = np.atleast_2d(log_sigma)
    return float(np.mean(np.sum(ls * ls, axis=1)))


# --- batched objective over all subclasses -----------------------------

def objective(mu, log_sigma, proto_raw, cap, x1, z, config: OptConfig, grad: bool = True):
    """Total loss over S subclasses with per-subclass batches.

    ``x1`` and ``z`` have shape (S, B, D). Each term is averaged within a
    subclass and then across subclasses. Returns ``(loss, parts, grads)``
    where ``parts`` holds the unweighted terms.
    """
    S = mu.shape[0]
    sigma = np.exp(log_sigma)
    sz = sigma[:, None, :] * z
    d = x1 - mu[:, None, :] - sz
    r = np.linalg.norm(d, axis=2)
    ok = r >= MIN_NORM
    n_ok = np.maximum(ok.sum(axis=1), 1)
    r_safe = np.where(ok, r, 1.0)
    u = d / r_safe[..., None]
    wn = np.linalg.norm(proto_raw, axis=1)
    v = proto_raw / wn[:, None]
    cos = np.einsum("sbd,sd->sb", u, v)

    l_out = np.sum(np.where(ok, 1.0 - cos, 0.0), axis=1) / n_ok
    a = r_safe / cap[:, None] - 1.0
    sp = softplus(a)
    l_path = np.sum(np.where(ok, sp * sp, 0.0), axis=1) / n_ok
    l_det = np.sum(log_sigma * log_sigma, axis=1)

    parts = {"out": float(l_out.mean()), "path": float(l_path.mean()), "det": float(l_det.mean())}
    loss = (config.lambda_out * parts["out"] + config.lambda_path * parts["path"]
            + config.lambda_det * parts["det"])
    if not grad:
        return loss, parts, None

    w_ok = ok / n_ok[:, None]
    # dL/dd per sample
    g_out = -(v[:, None, :] - cos[..., None] * u) / r_safe[..., None]
    g_path = (2.0 * sp * sigmoid(a) / cap[:, None])[..., None] * u
    g_d = (config.lambda_out * g_out + config.lambda_path * g_path) * (w_ok[..., None] / S)
    grads = {
        "mu": -g_d.sum(axis=1),
        "log_sigma": -(g_d * sz).sum(axis=1) + config.lambda_det * 2.0 * log_sigma / S,
    }
    u_bar = np.einsum("sb,sbd->sd", w_ok, u)
    g_v = -config.lambda_out * u_bar / S
    grads["proto_raw"] = (g_v - np.sum(g_v * v, axis=1, keepdims=True) * v) / wn[:, None]
    return loss, parts, grads


def total_loss(x1, z, params: SourceParams, config: OptConfig) -> float:
    return objective(params.mu, params.log_sigma, params.proto_raw, params.cap,
                     x1, z, config, grad=False)[0]


# --- initialisation, optimisation, diagnostics -------------------------

def init_sources(pairs, fit, caps: dict) -> SourceParams:
    """Sources start at the class center with unit scale.

    The prototype is the direction of the subclass's mixture-component mean
    (a residual), or the first axis when that mean is numerically zero.
    """
    pairs = [(int(c), int(k)) for c, k in pairs]
    D = fit.models[pairs[0][0]].dim
    mu = np.stack([fit.models[c].center for c, _ in pairs]).astype(float)
    protos = []
    for c, k in pairs:
        m = np.array(fit.models[c].means[k], dtype=float)
        n = np.linalg.norm(m)
        if n < 1e-9:
            m = np.zeros(D)
            m[0] = 1.0
            n = 1.0
        protos.append(m / n)
    for p in pairs:
        if p not in caps:
            raise ValueError(f"no samples (and no cap) for subclass {p}")
    cap = np.array([caps[p] for p in pairs], dtype=float)
    return SourceParams(pairs, mu, np.zeros_like(mu), np.stack(protos), cap)


def _members(y, labels, pairs):
    out = []
    for c, k in pairs:
        idx = np.flatnonzero((y == c) & (labels == k))
        if idx.size == 0:
            raise ValueError(f"empty subclass {(c, k)}")
        out.append(idx)
    return out


@dataclass
class OptResult:
    params: SourceParams
    trace: list = field(default_factory=list)
    before: "GeometryDiagnostics" = None
    after: "GeometryDiagnostics" = None


def optimize_sources(x, y, labels, init: SourceParams, config: OptConfig = None,
                     eval_seed: int = 12345) -> OptResult:
    """Minimise the source objective with Adam; caps stay frozen.

    Each step draws ``batch_size`` targets (with replacement) per subclass
    and fresh standard-normal noise. Prototypes are renormalised after every
    step. The trace holds one row per step.
    """
    config = config or OptConfig()
    config.validate()
    rng = np.random.default_rng(config.seed)
    params = init.copy()
    cap = params.cap  # never written
    members = _members(y, labels, params.pairs)
    S, D, B = len(params.pairs), x.shape[1], config.batch_size
    before = geometry_diagnostics(x, y, labels, params, eval_seed)

    state = {"mu": params.mu, "log_sigma": params.log_sigma, "proto_raw": params.proto_raw}
    opt = Adam(state, lr=config.lr)
    trace = []
    for step in range(config.steps):
        idx = np.stack([m[rng.integers(m.size, size=B)] for m in members])
        x1 = x[idx]
        z = rng.standard_normal((S, B, D))
        loss, parts, grads = objective(state["mu"], state["log_sigma"], state["proto_raw"],
                                       cap, x1, z, config)
        bad = [k for k, g in grads.items() if not np.all(np.isfinite(g))]
        if bad or not np.isfinite(loss):
            raise FloatingPointError(f"non-finite source objective at step {step}: {bad or 'loss'}")
        opt.step(grads)
        state["proto_raw"] /= np.linalg.norm(state["proto_raw"], axis=1, keepdims=True)
        trace.append({"step": step, "loss": loss, **parts})
    after = geometry_diagnostics(x, y, labels, params, eval_seed)
    return OptResult(params, trace, before, after)


@dataclass
class GeometryDiagnostics:
    cos_mean_w: float
    r_rel_w: float
    per_subclass: list

    def to_dict(self) -> dict:
        return {"cos_mean_w": self.cos_mean_w, "r_rel_w": self.r_rel_w,
                "per_subclass": self.per_subclass}


def geometry_diagnostics(x, y, labels, params: SourceParams, eval_seed: int = 12345) -> GeometryDiagnostics:
    """Share-weighted prototype cosine and coefficient of variation of |d|.

    One source draw per sample with noise fixed by ``eval_seed``, so before
    and after snapshots see the same ``z``.
    """
    z_all = np.random.default_rng(eval_seed).standard_normal(x.shape)
    v = params.prototype
    sigma = params.sigma
    rows = []
    total = 0
    for s, (c, k) in enumerate(params.pairs):
        mask = (y == c) & (labels == k)
        n = int(mask.sum())
        if n == 0:
            continue
        d = x[mask] - (params.mu[s] + sigma[s] * z_all[mask])
        r = np.linalg.norm(d, axis=1)
        if r.mean() <= 0:
            raise ValueError(f"zero mean displacement norm for subclass {(c, k)}")
        ok = r >= MIN_NORM
        cos = float(np.mean((d[ok] / r[ok, None]) @ v[s])) if ok.any() else 0.0
        rows.append({"class": c, "subclass": k, "n": n, "cos_mean": cos,
                     "r_rel": float(r.std() / r.mean()), "mean_norm": float(r.mean()),
                     "cap": float(params.cap[s])})
        total += n
    cos_w = sum(r["n"] * r["cos_mean"] for r in rows) / total
    rel_w = sum(r["n"] * r["r_rel"] for r in rows) / total
    return GeometryDiagnostics(float(cos_w), float(rel_w), rows)
