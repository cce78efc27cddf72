"""Feed-forward velocity network with hand-written backpropagation.

The network maps ``concat(x_t, time_features(t), embedding[cond])`` through
SiLU hidden layers to a velocity in R^D. Conditions are rows of a learned
embedding table: one row per (class, subclass) pair followed by one row per
coarse class.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

N_FREQ = 8
FREQS = np.pi * np.geomspace(1.0, 32.0, N_FREQ)


def time_features(t: np.ndarray) -> np.ndarray:
    """Sinusoidal features of t, shape (n, 2 * N_FREQ)."""
    arg = np.asarray(t, dtype=float)[:, None] * FREQS[None, :]
    return np.concatenate([np.sin(arg), np.cos(arg)], axis=1)


def _silu(a):
    s = 1.0 / (1.0 + np.exp(-a))
    return a * s, s


@dataclass
class VelocityField:
    """MLP velocity field v(x, t | condition).

    Attributes
    ----------
    dim : int
        Data dimension D.
    pairs : list of (int, int)
        (class, subclass) pairs, one embedding row each.
    classes : list of int
        Coarse classes, one embedding row each (after the pair rows).
    hidden : tuple of int
        Hidden layer widths.
    params : dict
        ``emb``, ``W0..WL``, ``b0..bL``; the last layer is the output layer.
    """

    dim: int
    pairs: list
    classes: list
    hidden: tuple = (128, 128, 128)
    emb_dim: int = 32
    params: dict = field(default_factory=dict)

    @classmethod
    def init(cls, dim, pairs, classes, hidden=(128, 128, 128), emb_dim=32, seed=0,
             dtype=np.float32):
        rng = np.random.default_rng(seed)
        pairs = [tuple(int(v) for v in p) for p in pairs]
        classes = [int(c) for c in classes]
        net = cls(dim=dim, pairs=pairs, classes=classes, hidden=tuple(hidden), emb_dim=emb_dim)
        widths = [dim + 2 * N_FREQ + emb_dim, *hidden, dim]
        p = {"emb": rng.normal(0.0, 1.0, size=(len(pairs) + len(classes), emb_dim))}
        for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
            p[f"W{i}"] = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_in, fan_out))
            p[f"b{i}"] = np.zeros(fan_out)
        net.params = {k: v.astype(dtype) for k, v in p.items()}
        return net

    @property
    def dtype(self):
        return self.params["b0"].dtype

    @property
    def n_layers(self) -> int:
        return len(self.hidden) + 1

    def cond_index(self, c, k=None) -> np.ndarray:
        """Embedding rows for classes ``c`` (coarse) or pairs ``(c, k)``."""
        c = np.atleast_1d(np.asarray(c, dtype=int))
        if k is None:
            lookup = {cl: len(self.pairs) + i for i, cl in enumerate(self.classes)}
            return np.array([lookup[int(ci)] for ci in c], dtype=int)
        k = np.broadcast_to(np.atleast_1d(np.asarray(k, dtype=int)), c.shape)
        lookup = {p: i for i, p in enumerate(self.pairs)}
        return np.array([lookup[(int(ci), int(ki))] for ci, ki in zip(c, k)], dtype=int)

    def _forward(self, x, t, rows):
        p = self.params
        dt = self.dtype
        h = np.concatenate([x.astype(dt, copy=False), time_features(t).astype(dt),
                            p["emb"][rows]], axis=1)
        cache = [h]
        for i in range(self.n_layers - 1):
            a = h @ p[f"W{i}"] + p[f"b{i}"]
            h, s = _silu(a)
            cache.append((a, s, h))
        last = self.n_layers - 1
        out = h @ p[f"W{last}"] + p[f"b{last}"]
        return out, cache

    def __call__(self, x, t, rows) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        t = np.broadcast_to(np.asarray(t, dtype=float), (x.shape[0],))
        rows = np.broadcast_to(np.asarray(rows, dtype=int), (x.shape[0],))
        return self._forward(x, t, rows)[0].astype(float)

    def loss_and_grad(self, x, t, rows, target):
        """Mean over the batch of ||v - target||^2 and its parameter gradient."""
        out, cache = self._forward(x, t, rows)
        n = x.shape[0]
        resid = out - target.astype(self.dtype, copy=False)
        loss = float(np.sum(resid * resid) / n)
        p = self.params
        grads = {}
        g = 2.0 * resid / n
        last = self.n_layers - 1
        h_prev = cache[-1][2] if last > 0 else cache[0]
        grads[f"W{last}"] = h_prev.T @ g
        grads[f"b{last}"] = g.sum(axis=0)
        g = g @ p[f"W{last}"].T
        for i in range(last - 1, -1, -1):
            a, s, _ = cache[i + 1]
            g = g * (s * (1.0 + a * (1.0 - s)))
            h_in = cache[i][2] if i > 0 else cache[0]
            grads[f"W{i}"] = h_in.T @ g
            grads[f"b{i}"] = g.sum(axis=0)
            g = g @ p[f"W{i}"].T
        g_emb = np.zeros_like(p["emb"])
        np.add.at(g_emb, rows, g[:, self.dim + 2 * N_FREQ:])
        grads["emb"] = g_emb
        return loss, grads

    # serialization -----------------------------------------------------
    def manifest(self) -> dict:
        offset = 0
        entries = []
        for name in sorted(self.params):
            arr = self.params[name]
            entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
            offset += arr.size
        return {
            "dim": self.dim,
            "pairs": [list(p) for p in self.pairs],
            "classes": list(self.classes),
            "hidden": list(self.hidden),
            "emb_dim": self.emb_dim,
            "dtype": np.dtype(self.dtype).newbyteorder("<").str,
            "arrays": entries,
        }

    def to_bytes(self) -> bytes:
        dt = np.dtype(self.dtype).newbyteorder("<")
        flat = [np.ascontiguousarray(self.params[n], dtype=dt).ravel() for n in sorted(self.params)]
        return np.concatenate(flat).tobytes()

    @classmethod
    def from_bytes(cls, manifest: dict, blob: bytes) -> "VelocityField":
        dt = np.dtype(manifest.get("dtype", "<f8"))
        flat = np.frombuffer(blob, dtype=dt)
        params = {}
        for e in manifest["arrays"]:
            size = int(np.prod(e["shape"])) if e["shape"] else 1
            params[e["name"]] = flat[e["offset"]:e["offset"] + size].reshape(e["shape"]).astype(dt.newbyteorder("="))
        return cls(dim=manifest["dim"], pairs=[tuple(p) for p in manifest["pairs"]],
                   classes=list(manifest["classes"]), hidden=tuple(manifest["hidden"]),
                   emb_dim=manifest["emb_dim"], params=params)
