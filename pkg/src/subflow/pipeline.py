"""End-to-end pipeline: data, subclasses, sources, flow matching, augmentation, evaluation.

Every stage seed is derived from the master seed and the stage name, so a
stage can be rerun on its own and still see the same randomness.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import gmm as gmm_mod
from . import metrics
from .fm import FmConfig, FmResult, train_fm
from .sampler import SampleRequest, sample_class, synthesize_augmentation
from .sourceopt import OptConfig, OptResult, compute_caps, init_sources, optimize_sources
from .synthbench import (Dataset, DatasetSpec, SpecError, augmentation_targets, balanced_test_set,
                         default_spec, generate_dataset, partition_classes)


class ConfigError(ValueError):
    """Invalid pipeline configuration; ``field`` is the dotted path of the culprit."""

    def __init__(self, field_path: str, message: str):
        self.field = field_path
        super().__init__(f"{field_path}: {message}")


def stage_seed(master: int, stage: str, replicate: int = 0) -> int:
    h = hashlib.sha256(f"{int(master)}/{stage}/{int(replicate)}".encode()).digest()
    return int.from_bytes(h[:4], "little")


@dataclass
class GmmConfig:
    K_max: int = 6
    gamma: float = 0.5
    min_size: int = 50

    def validate(self):
        if self.K_max < 1:
            raise ValueError("K_max must be >= 1")
        if self.min_size < 1:
            raise ValueError("min_size must be >= 1")
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")


@dataclass
class SamplerConfig:
    steps: int = 64
    method: str = "euler"
    eval_count: int = 2000

    def validate(self):
        if self.steps < 1 or self.eval_count < 1:
            raise ValueError("steps and eval_count must be >= 1")
        if self.method not in ("euler", "heun"):
            raise ValueError("method must be 'euler' or 'heun'")


@dataclass
class EvalConfig:
    test_per_class: int = 500
    reference_per_class: int = 5000
    classifier_seeds: tuple = (0, 1, 2)
    classifier_features: str = "rff"
    knn_k: int = 10
    mode_radius: float = 2.0
    mode_min_share: float = 0.02

    def validate(self):
        if self.test_per_class < 1 or self.reference_per_class < 3:
            raise ValueError("test/reference sizes too small")
        if self.classifier_features not in ("rff", "linear"):
            raise ValueError("classifier_features must be 'rff' or 'linear'")


@dataclass
class PipelineConfig:
    dataset: DatasetSpec = field(default_factory=default_spec)
    gmm: GmmConfig = field(default_factory=GmmConfig)
    source: OptConfig = field(default_factory=OptConfig)
    fm: FmConfig = field(default_factory=FmConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    replicates: int = 3
    seed: int = 0
    out: str = "runs/default"

    _SECTIONS = {"gmm": GmmConfig, "source": OptConfig, "fm": FmConfig,
                 "sampler": SamplerConfig, "eval": EvalConfig}

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        if not isinstance(d, dict):
            raise ConfigError("<root>", "config must be a JSON object")
        known = {"dataset", "replicates", "seed", "out", *cls._SECTIONS}
        for key in d:
            if key not in known:
                raise ConfigError(key, "unknown field")
        kw = {}
        if "dataset" in d:
            try:
                kw["dataset"] = DatasetSpec.from_dict(d["dataset"])
            except SpecError as exc:
                raise ConfigError("dataset", str(exc)) from None
        for name, typ in cls._SECTIONS.items():
            if name not in d:
                continue
            sub = d[name]
            if not isinstance(sub, dict):
                raise ConfigError(name, "must be an object")
            allowed = {f.name: f for f in fields(typ)}
            for key in sub:
                if key not in allowed:
                    raise ConfigError(f"{name}.{key}", "unknown field")
            try:
                vals = {k: (tuple(v) if isinstance(v, list) else v) for k, v in sub.items()}
                obj = typ(**vals)
                obj.validate()
            except (TypeError, ValueError) as exc:
                raise ConfigError(name, str(exc)) from None
            kw[name] = obj
        for key, typ in (("replicates", int), ("seed", int), ("out", str)):
            if key in d:
                if not isinstance(d[key], typ) or isinstance(d[key], bool):
                    raise ConfigError(key, f"expected {typ.__name__}")
                kw[key] = d[key]
        cfg = cls(**kw)
        if cfg.replicates < 1:
            raise ConfigError("replicates", "must be >= 1")
        return cfg

    def to_dict(self, include_out: bool = True) -> dict:
        out = {"dataset": self.dataset.to_dict(), "replicates": self.replicates, "seed": self.seed}
        if include_out:
            out["out"] = self.out
        for name in self._SECTIONS:
            sec = asdict(getattr(self, name))
            out[name] = {k: (list(v) if isinstance(v, tuple) else v) for k, v in sec.items()}
        return out

    def hash(self) -> str:
        # the output location is not a setting; runs written elsewhere share a hash
        return hashlib.sha256(json.dumps(self.to_dict(include_out=False), sort_keys=True).encode()).hexdigest()[:16]


# --- stages ------------------------------------------------------------

@dataclass
class DataBundle:
    train: Dataset
    test: Dataset
    partition: object
    targets: dict

    @property
    def tail_classes(self) -> list:
        return self.partition.classes_in("ULT", "LT", "MT")


def stage_generate(cfg: PipelineConfig) -> DataBundle:
    spec = cfg.dataset
    train = generate_dataset(spec, seed=stage_seed(cfg.seed, "generate"))
    test = balanced_test_set(spec, cfg.eval.test_per_class, seed=stage_seed(cfg.seed, "test"))
    part = partition_classes(train.counts())
    return DataBundle(train, test, part, augmentation_targets(part))


def stage_fit_subclasses(cfg: PipelineConfig, train: Dataset, subclass: bool = True):
    if not subclass:
        return gmm_mod.coarse_fit(train.x, train.y)
    g = cfg.gmm
    return gmm_mod.fit_subclasses(train.x, train.y, K_max=g.K_max, gamma=g.gamma,
                                  min_size=g.min_size, seed=stage_seed(cfg.seed, "gmm"))


def stage_optimize_sources(cfg: PipelineConfig, train: Dataset, fit, replicate: int = 0,
                           config: OptConfig | None = None) -> OptResult:
    centers = {c: m.center for c, m in fit.models.items()}
    caps = compute_caps(train.x, train.y, fit.labels, centers)
    init = init_sources(fit.pairs(), fit, caps)
    oc = config or cfg.source
    oc = OptConfig(**{**asdict(oc), "seed": stage_seed(cfg.seed, "sources", replicate)})
    return optimize_sources(train.x, train.y, fit.labels, init, oc,
                            eval_seed=stage_seed(cfg.seed, "diagnostics"))


def stage_train(cfg: PipelineConfig, train: Dataset, fit, sources, subclass: bool, learned: bool,
                replicate: int = 0) -> FmResult:
    fc = FmConfig(**{**asdict(cfg.fm), "seed": stage_seed(cfg.seed, "fm", replicate),
                     "conditioning": "subclass" if subclass else "coarse",
                     "source": "learned" if learned else "standard"})
    return train_fm(train.x, train.y, fit.labels, fc, sources=sources, pairs=fit.pairs(),
                    classes=sorted(fit.models))


def _request(cfg, fm: FmResult, c, count, seed):
    return SampleRequest(c=c, count=count, steps=cfg.sampler.steps, seed=seed,
                         conditioning=fm.config.conditioning, source=fm.config.source,
                         method=cfg.sampler.method)


def stage_sample(cfg: PipelineConfig, data: DataBundle, fit, sources, fm: FmResult,
                 replicate: int = 0):
    """Augmented training set plus a fixed-size evaluation draw per tail class."""
    weights = fit.weights(data.train.y)
    seed = stage_seed(cfg.seed, "sample", replicate)
    template = _request(cfg, fm, 0, 1, seed)
    synth = synthesize_augmentation(fm.model, sources, weights, data.targets,
                                    data.train.counts(), template)
    eval_seed = stage_seed(cfg.seed, "sample-eval", replicate)
    gen = {}
    for c in data.tail_classes:
        x, k = sample_class(fm.model, sources, weights[c],
                            _request(cfg, fm, c, cfg.sampler.eval_count, eval_seed))
        gen[c] = x
    return synth, gen


def generative_metrics(cfg: PipelineConfig, data: DataBundle, gen: dict) -> dict:
    spec = cfg.dataset
    ref = balanced_test_set(spec, cfg.eval.reference_per_class, seed=stage_seed(cfg.seed, "reference"))
    out = {}
    for c, x in gen.items():
        cs = spec.class_spec(c)
        out[c] = {
            "frechet": metrics.gaussian_frechet(ref.of_class(c), x),
            "mode_recall": metrics.mode_recall(x, [m.mean for m in cs.modes], [m.var for m in cs.modes],
                                               cfg.eval.mode_radius, cfg.eval.mode_min_share),
        }
    return out


def downstream(cfg: PipelineConfig, train: Dataset, test: Dataset) -> list:
    rows = []
    for s in cfg.eval.classifier_seeds:
        bacc, f1 = metrics.train_downstream(train.x, train.y, test.x, test.y, seed=int(s),
                                            features=cfg.eval.classifier_features)
        rows.append({"classifier_seed": int(s), "bacc": bacc, "macro_f1": f1})
    return rows


def subclass_purity(cfg: PipelineConfig, train: Dataset, fit) -> dict:
    split = [c for c, m in fit.models.items() if m.K > 1]
    mask = np.isin(train.y, split)
    if not mask.any():
        return {"learned": float("nan"), "random": float("nan"), "delta": float("nan")}
    emb = metrics.random_projection(train.dim, seed=stage_seed(cfg.seed, "knn-embedding"))
    x, y, lab = train.x[mask], train.y[mask], fit.labels[mask]
    learned = metrics.knn_purity(x, y, lab, cfg.eval.knn_k, emb)
    rand = metrics.knn_purity(x, y, metrics.matched_random_partition(y, lab, stage_seed(cfg.seed, "shuffle")),
                              cfg.eval.knn_k, emb)
    return {"learned": learned, "random": rand, "delta": learned - rand}


CELLS = {
    "coarse+standard": (False, False),
    "coarse+optimized": (False, True),
    "subclass+standard": (True, False),
    "subclass+optimized": (True, True),
}


@dataclass
class CellRun:
    name: str
    replicate: int
    fit: object
    sources: OptResult
    fm: FmResult
    synthetic: Dataset
    generated: dict
    gen_metrics: dict
    classification: list


def run_cell(cfg: PipelineConfig, data: DataBundle, name: str, replicate: int = 0,
             fits: dict | None = None) -> CellRun:
    subclass, optimize = CELLS[name]
    fits = {} if fits is None else fits
    if subclass not in fits:
        fits[subclass] = stage_fit_subclasses(cfg, data.train, subclass)
    fit = fits[subclass]
    opt = stage_optimize_sources(cfg, data.train, fit, replicate) if optimize else None
    sources = opt.params if opt is not None else None
    fm = stage_train(cfg, data.train, fit, sources, subclass, optimize, replicate)
    synth, gen = stage_sample(cfg, data, fit, sources, fm, replicate)
    augmented = Dataset.concat(data.train, synth)
    return CellRun(name, replicate, fit, opt, fm, synth, gen, generative_metrics(cfg, data, gen),
                   downstream(cfg, augmented, data.test))


def summarize_cells(runs: list, baseline: list) -> dict:
    """Means over replicates (generative) and classifier seeds for every cell."""
    out = {}
    by_cell = {}
    for r in runs:
        by_cell.setdefault(r.name, []).append(r)
    for name, rs in by_cell.items():
        cls_rows = [row for r in rs for row in r.classification]
        fr = [np.mean([m["frechet"] for m in r.gen_metrics.values()]) for r in rs]
        mr = [np.mean([m["mode_recall"] for m in r.gen_metrics.values()]) for r in rs]
        out[name] = {
            "bacc": float(np.mean([row["bacc"] for row in cls_rows])),
            "macro_f1": float(np.mean([row["macro_f1"] for row in cls_rows])),
            "bacc_runs": [row["bacc"] for row in cls_rows],
            "tail_frechet": float(np.mean(fr)),
            "tail_mode_recall": float(np.mean(mr)),
        }
    out["real-only"] = {
        "bacc": float(np.mean([row["bacc"] for row in baseline])),
        "macro_f1": float(np.mean([row["macro_f1"] for row in baseline])),
        "bacc_runs": [row["bacc"] for row in baseline],
    }
    return out
