"""Class-conditional generation as a mixture over induced subclasses."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fm import condition_rows, source_index
from .synthbench import Dataset


class TrajectoryError(FloatingPointError):
    def __init__(self, indices, step):
        self.indices = np.asarray(indices)
        self.step = step
        super().__init__(f"non-finite state at step {step} for trajectories {self.indices[:10].tolist()}")


def euler_integrate(field, x0, rows, steps: int = 64, method: str = "euler"):
    """Integrate dx/dt = field(x, t, rows) from t=0 to t=1 with fixed steps.

    ``field`` is any callable ``(x, t, rows) -> velocity``. ``method="heun"``
    uses the explicit trapezoid (Heun) predictor-corrector.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    x = np.array(x0, dtype=float, copy=True)
    h = 1.0 / steps
    n = x.shape[0]
    for i in range(steps):
        t = np.full(n, i * h)
        v = field(x, t, rows)
        if method == "heun":
            x_pred = x + h * v
            v = 0.5 * (v + field(x_pred, t + h, rows))
        elif method != "euler":
            raise ValueError(f"unknown method {method!r}")
        x = x + h * v
        bad = ~np.all(np.isfinite(x), axis=1)
        if bad.any():
            raise TrajectoryError(np.flatnonzero(bad), i)
    return x


@dataclass
class SampleRequest:
    c: int
    count: int
    steps: int = 64
    seed: int = 0
    conditioning: str = "subclass"
    source: str = "learned"
    method: str = "euler"

    def validate(self):
        if self.count < 1 or self.steps < 1:
            raise ValueError("count and steps must be >= 1")


def _check_weights(w):
    w = np.asarray(w, dtype=float)
    if w.ndim != 1 or w.size == 0 or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
        raise ValueError("subclass weights must be a probability vector")
    return w


def draw_latents(request: SampleRequest, weights, dim: int):
    """Per-sample subclass and noise, each from a stream keyed by (seed, class, index).

    Draws for sample i never depend on how many other samples are requested.
    """
    cdf = np.cumsum(_check_weights(weights))
    cdf[-1] = 1.0
    ks = np.empty(request.count, dtype=int)
    z = np.empty((request.count, dim))
    for i in range(request.count):
        rng = np.random.default_rng([request.seed, request.c, i])
        ks[i] = int(np.searchsorted(cdf, rng.random(), side="right"))
        z[i] = rng.standard_normal(dim)
    return ks, z


def sample_class(model, sources, weights, request: SampleRequest):
    """Generate ``request.count`` points of class ``request.c``.

    Subclasses are drawn from ``weights`` (the empirical p(k|c)); each start
    point comes from that subclass's source and is integrated under the
    (c, k) condition. Returns ``(x, k)``.
    """
    request.validate()
    weights = _check_weights(weights)
    ks, z = draw_latents(request, weights, model.dim)
    if request.conditioning == "coarse":
        ks[:] = 0
    y = np.full(request.count, request.c, dtype=int)
    if request.source == "learned":
        if sources is None:
            raise ValueError("learned source mode needs source parameters")
        s = source_index(sources, y, ks, request.conditioning)
        x0 = sources.mu[s] + np.exp(sources.log_sigma[s]) * z
    else:
        x0 = z
    rows = condition_rows(model, y, ks, request.conditioning)
    x = euler_integrate(model, x0, rows, request.steps, request.method)
    return x, ks


def synthesize_augmentation(model, sources, weights: dict, targets: dict, counts: dict,
                            template: SampleRequest) -> Dataset:
    """Generate ``target - n_c`` synthetic rows for every class that needs them.

    ``template`` supplies steps, seed and modes; its ``c`` and ``count`` are
    replaced per class. Rows carry ``synthetic=1`` and ``true_mode=-1``.
    """
    xs, ys, ks = [], [], []
    for c in sorted(targets):
        need = max(0, int(targets[c]) - int(counts[c]))
        if need == 0:
            continue
        req = SampleRequest(c=c, count=need, steps=template.steps, seed=template.seed,
                            conditioning=template.conditioning, source=template.source,
                            method=template.method)
        x, k = sample_class(model, sources, weights[c], req)
        xs.append(x)
        ys.append(np.full(need, c, dtype=int))
        ks.append(k)
    if not xs:
        D = model.dim
        return Dataset(np.empty((0, D)), np.empty(0, int), np.empty(0, int),
                       np.empty(0, int), np.empty(0, int))
    n = sum(len(v) for v in ys)
    return Dataset(np.vstack(xs), np.concatenate(ys), np.full(n, -1, dtype=int),
                   np.concatenate(ks), np.ones(n, dtype=int))


def merge_augmented(real: Dataset, synthetic: Dataset) -> Dataset:
    return Dataset.concat(real, synthetic)
