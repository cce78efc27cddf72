"""Linear conditional flow matching on labelled point clouds."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .network import VelocityField
from .optim import Adam

CONDITIONING = ("coarse", "subclass")
SOURCES = ("standard", "learned")


@dataclass
class FmConfig:
    steps: int = 20000
    batch_size: int = 512
    lr: float = 1e-3
    seed: int = 0
    conditioning: str = "subclass"
    source: str = "learned"
    hidden: tuple = (128, 128, 128)
    emb_dim: int = 32

    def validate(self):
        if self.conditioning not in CONDITIONING:
            raise ValueError(f"conditioning must be one of {CONDITIONING}")
        if self.source not in SOURCES:
            raise ValueError(f"source must be one of {SOURCES}")
        if self.steps < 1 or self.batch_size < 1 or self.lr <= 0:
            raise ValueError("steps and batch_size must be >= 1, lr > 0")


def interpolate(x0, x1, t):
    """(1 - t) x0 + t x1 with t broadcast over rows."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0) or np.any(t > 1):
        raise ValueError("t must lie in [0, 1]")
    if t.ndim == 1:
        t = t[:, None]
    return (1.0 - t) * x0 + t * x1


def cfm_loss(model, x0, x1, t, rows) -> float:
    """Mean squared error between v(x_t, t | cond) and d = x1 - x0."""
    out = model(interpolate(x0, x1, t), t, rows)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite velocity in forward pass")
    d = x1 - x0
    return float(np.mean(np.sum((out - d) ** 2, axis=1)))


def condition_rows(model: VelocityField, y, k, conditioning: str) -> np.ndarray:
    if conditioning == "coarse":
        return model.cond_index(y)
    return model.cond_index(y, k)


def source_index(sources, y, k, conditioning: str) -> np.ndarray:
    """Row of ``sources`` for each sample; coarse runs use subclass 0."""
    lookup = {p: i for i, p in enumerate(sources.pairs)}
    kk = np.zeros_like(y) if conditioning == "coarse" else k
    try:
        return np.array([lookup[(int(c), int(j))] for c, j in zip(y, kk)], dtype=int)
    except KeyError as exc:
        raise KeyError(f"missing source for subclass {exc.args[0]}") from None


def draw_x0(sources, src_rows, z):
    if sources is None:
        return z
    return sources.mu[src_rows] + np.exp(sources.log_sigma[src_rows]) * z


@dataclass
class FmResult:
    model: VelocityField
    config: FmConfig
    trace: list = field(default_factory=list)


def train_fm(x, y, k, config: FmConfig, sources=None, pairs=None, classes=None) -> FmResult:
    """Fit a velocity field by regressing displacements along straight paths.

    Each step draws a minibatch of training points uniformly, ``t ~ U[0, 1]``
    and ``x0`` from the configured source (``N(0, I)`` for ``standard``, the
    per-subclass Gaussian for ``learned``). Coarse conditioning ignores ``k``
    for the network; with a learned source it uses subclass 0 of each class.
    """
    config.validate()
    if config.source == "learned" and sources is None:
        raise ValueError("learned source mode needs source parameters")
    y = np.asarray(y, dtype=int)
    k = np.zeros_like(y) if k is None else np.asarray(k, dtype=int)
    classes = sorted(int(c) for c in np.unique(y)) if classes is None else classes
    if pairs is None:
        pairs = sorted({(int(c), int(j)) for c, j in zip(y, k)})
    model = VelocityField.init(x.shape[1], pairs, classes, hidden=config.hidden,
                               emb_dim=config.emb_dim, seed=config.seed)
    rows_all = condition_rows(model, y, k, config.conditioning)
    use_src = sources if config.source == "learned" else None
    src_all = source_index(sources, y, k, config.conditioning) if use_src is not None else None

    rng = np.random.default_rng([config.seed, 1])
    opt = Adam(model.params, lr=config.lr)
    n, D, B = len(y), x.shape[1], config.batch_size
    trace = []
    for step in range(config.steps):
        idx = rng.integers(n, size=B)
        x1 = x[idx]
        z = rng.standard_normal((B, D))
        t = rng.random(B)
        x0 = draw_x0(use_src, src_all[idx] if use_src is not None else None, z)
        xt = (1.0 - t)[:, None] * x0 + t[:, None] * x1
        loss, grads = model.loss_and_grad(xt, t, rows_all[idx], x1 - x0)
        if not np.isfinite(loss):
            raise FloatingPointError(f"non-finite flow-matching loss at step {step}")
        opt.step(grads)
        trace.append(loss)
    return FmResult(model, config, trace)


def save_model(result: FmResult, directory, stem: str = "velocity") -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = result.model.manifest()
    cfg = asdict(result.config)
    cfg["hidden"] = list(cfg["hidden"])
    manifest["config"] = cfg
    manifest["seed"] = result.config.seed
    (directory / f"{stem}.bin").write_bytes(result.model.to_bytes())
    (directory / f"{stem}.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def load_model(directory, stem: str = "velocity") -> FmResult:
    directory = Path(directory)
    manifest = json.loads((directory / f"{stem}.json").read_text())
    model = VelocityField.from_bytes(manifest, (directory / f"{stem}.bin").read_bytes())
    cfg = dict(manifest["config"])
    cfg["hidden"] = tuple(cfg["hidden"])
    return FmResult(model, FmConfig(**cfg), [])
