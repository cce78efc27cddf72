"""Command-line driver: one subcommand per pipeline stage, chained through files.

Layout under the output directory::

    config.json
    data/        train.csv test.csv tiers.json spec.json
    subclasses/  assignments.csv gmm.json ebic.csv split_summary.json
    sources/     caps.json sources.json trace.csv diagnostics.json diagnostics_subclass.csv
    model/       velocity.bin velocity.json loss.csv
    samples/     synthetic.csv augmented.csv generated.csv
    eval/        report.json generative.csv downstream.csv samples.svg
    ablation/    ablation.csv summary.json bacc.svg

Every stage directory also holds a ``manifest.json``. Exit codes: 0 on
success, 1 on a runtime failure, 2 on a configuration error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import io, metrics, pipeline as pl
from .fm import FmResult, load_model, save_model
from .gmm import GmmModel, SubclassFit, coarse_fit
from .sourceopt import SourceParams
from .synthbench import Dataset, SpecError, partition_classes

OUT_ROOT_ENV = "SUBFLOW_OUT_ROOT"
REPLICATE = 0
PER_REPLICATE = {"sources", "fm", "sample", "sample-eval"}


class Run:
    """Resolved config plus path helpers for one output directory."""

    def __init__(self, cfg: pl.PipelineConfig, out: Path):
        self.cfg = cfg
        self.out = out
        self.hash = cfg.hash()

    def dir(self, stage: str) -> Path:
        d = self.out / stage
        d.mkdir(parents=True, exist_ok=True)
        return d

    def seeds(self, *stages) -> dict:
        return {s: pl.stage_seed(self.cfg.seed, s, REPLICATE if s in PER_REPLICATE else 0) for s in stages}

    def manifest(self, stage: str, files, *seed_names):
        io.write_manifest(self.out / stage, stage, self.hash, self.seeds(*seed_names), files)

    @property
    def subclass(self) -> bool:
        return self.cfg.fm.conditioning == "subclass"

    @property
    def learned(self) -> bool:
        return self.cfg.fm.source == "learned"


def load_config(path, seed=None, out=None) -> Run:
    if path is None:
        raw = {}
    else:
        p = Path(path)
        if not p.exists():
            raise pl.ConfigError("--config", f"file not found: {p}")
        try:
            raw = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise pl.ConfigError(f"{p}:{exc.lineno}:{exc.colno}", exc.msg) from None
    cfg = pl.PipelineConfig.from_dict(raw)
    if seed is not None:
        cfg.seed = seed
    if out is not None:
        cfg.out = out
    target = Path(cfg.out)
    root = os.environ.get(OUT_ROOT_ENV)
    if root and not target.is_absolute():
        target = Path(root) / target
    target.mkdir(parents=True, exist_ok=True)
    run = Run(cfg, target)
    io.write_json(target / "config.json", cfg.to_dict(include_out=False))
    return run


# --- artifact loaders ---------------------------------------------------

def load_bundle(run: Run) -> pl.DataBundle:
    d = run.out / "data"
    train = io.read_dataset(d / "train.csv")
    test = io.read_dataset(d / "test.csv")
    tiers = io.read_json(d / "tiers.json")
    part = partition_classes(train.counts())
    return pl.DataBundle(train, test, part, {int(c): int(v) for c, v in tiers["targets"].items()})


def load_fit(run: Run, train: Dataset) -> SubclassFit:
    if not run.subclass:
        return coarse_fit(train.x, train.y)
    d = run.out / "subclasses"
    models = {int(c): GmmModel.from_dict(m) for c, m in io.read_json(d / "gmm.json").items()}
    labels = io.read_dataset(d / "assignments.csv").subclass
    return SubclassFit(models, {}, labels)


def load_sources(run: Run):
    if not run.learned:
        return None
    return SourceParams.from_dict(io.read_json(run.out / "sources" / "sources.json"))


# --- subcommands --------------------------------------------------------

def cmd_generate(run: Run):
    data = pl.stage_generate(run.cfg)
    d = run.dir("data")
    part = data.partition
    files = [
        io.write_dataset(d / "train.csv", data.train),
        io.write_dataset(d / "test.csv", data.test),
        io.write_json(d / "spec.json", run.cfg.dataset.to_dict()),
        io.write_json(d / "tiers.json", {"median": part.median, "dominant": part.dominant,
                                         "tiers": part.tiers, "counts": part.counts,
                                         "targets": data.targets}),
    ]
    run.manifest("data", files, "generate", "test")
    return data


def cmd_fit_subclasses(run: Run):
    train = load_bundle(run).train
    fit = pl.stage_fit_subclasses(run.cfg, train, subclass=True)
    d = run.dir("subclasses")
    labelled = Dataset(train.x, train.y, train.true_mode, fit.labels, train.synthetic)
    table = [{"class": c, **row} for c in sorted(fit.selections) for row in fit.selections[c].table]
    files = [
        io.write_dataset(d / "assignments.csv", labelled),
        io.write_json(d / "gmm.json", {c: m.to_dict() for c, m in fit.models.items()}),
        io.write_records(d / "ebic.csv", table, ["class", "K", "ebic", "loglik", "min_size", "admissible"]),
        io.write_json(d / "split_summary.json", fit.split_summary(train.y)),
    ]
    run.manifest("subclasses", files, "gmm")
    return fit


def cmd_optimize_sources(run: Run):
    data = load_bundle(run)
    fit = load_fit(run, data.train)
    res = pl.stage_optimize_sources(run.cfg, data.train, fit, REPLICATE)
    d = run.dir("sources")
    caps = {f"{c},{k}": float(v) for (c, k), v in zip(res.params.pairs, res.params.cap)}
    rows = [{"stage": s, **r} for s, diag in (("before", res.before), ("after", res.after))
            for r in diag.per_subclass]
    files = [
        io.write_json(d / "caps.json", caps),
        io.write_json(d / "sources.json", res.params.to_dict()),
        io.write_records(d / "trace.csv", res.trace, ["step", "loss", "out", "path", "det"]),
        io.write_json(d / "diagnostics.json", {"before": res.before.to_dict(), "after": res.after.to_dict()}),
        io.write_records(d / "diagnostics_subclass.csv", rows,
                         ["stage", "class", "subclass", "n", "cos_mean", "r_rel", "mean_norm", "cap"]),
    ]
    run.manifest("sources", files, "sources", "diagnostics")
    return res


def cmd_train(run: Run) -> FmResult:
    data = load_bundle(run)
    fit = load_fit(run, data.train)
    fm = pl.stage_train(run.cfg, data.train, fit, load_sources(run), run.subclass, run.learned, REPLICATE)
    d = run.dir("model")
    save_model(fm, d)
    loss = io.write_records(d / "loss.csv", [{"step": i, "loss": v} for i, v in enumerate(fm.trace)])
    run.manifest("model", [d / "velocity.bin", d / "velocity.json", loss], "fm")
    return fm


def cmd_sample(run: Run):
    data = load_bundle(run)
    fit = load_fit(run, data.train)
    fm = load_model(run.out / "model")
    synth, gen = pl.stage_sample(run.cfg, data, fit, load_sources(run), fm, REPLICATE)
    d = run.dir("samples")
    drawn = Dataset(np.vstack([gen[c] for c in sorted(gen)]),
                    np.concatenate([np.full(len(gen[c]), c) for c in sorted(gen)]),
                    np.full(sum(len(v) for v in gen.values()), -1),
                    synthetic=np.ones(sum(len(v) for v in gen.values()), dtype=int))
    real = Dataset(data.train.x, data.train.y, data.train.true_mode, fit.labels, data.train.synthetic)
    files = [
        io.write_dataset(d / "synthetic.csv", synth),
        io.write_dataset(d / "augmented.csv", Dataset.concat(real, synth)),
        io.write_dataset(d / "generated.csv", drawn),
    ]
    run.manifest("samples", files, "sample", "sample-eval")
    return synth, gen


def _by_class(ds: Dataset) -> dict:
    return {c: ds.of_class(c) for c in ds.classes}


def cmd_evaluate(run: Run, generated=None, reference=None):
    """Report generative fidelity, downstream scores and subclass purity.

    ``generated`` / ``reference`` override the sample file and the
    ground-truth reference draw with arbitrary dataset CSVs.
    """
    cfg = run.cfg
    d = run.dir("eval")
    gen_path = Path(generated) if generated else run.out / "samples" / "generated.csv"
    gen = _by_class(io.read_dataset(gen_path))
    report = {}
    if reference:
        ref = _by_class(io.read_dataset(reference))
        per_class = {c: {"frechet": metrics.gaussian_frechet(ref[c], x)} for c, x in gen.items()}
    else:
        data = load_bundle(run)
        per_class = pl.generative_metrics(cfg, data, gen)
        augmented = io.read_dataset(run.out / "samples" / "augmented.csv")
        rows = ([{"train": "real-only", **r} for r in pl.downstream(cfg, data.train, data.test)]
                + [{"train": "augmented", **r} for r in pl.downstream(cfg, augmented, data.test)])
        io.write_records(d / "downstream.csv", rows, ["train", "classifier_seed", "bacc", "macro_f1"])
        for name in ("real-only", "augmented"):
            sel = [r for r in rows if r["train"] == name]
            report[name] = {"bacc": float(np.mean([r["bacc"] for r in sel])),
                            "macro_f1": float(np.mean([r["macro_f1"] for r in sel]))}
        if run.subclass:
            report["knn_purity"] = pl.subclass_purity(cfg, data.train, load_fit(run, data.train))
        diag = run.out / "sources" / "diagnostics.json"
        if diag.exists():
            snap = io.read_json(diag)
            report["geometry"] = {s: {k: snap[s][k] for k in ("cos_mean_w", "r_rel_w")} for s in snap}
        from .plots import scatter_real_vs_generated
        scatter_real_vs_generated(data.train, gen, d / "samples.svg")
    gen_rows = [{"class": c, **m} for c, m in sorted(per_class.items())]
    report["generative"] = {str(c): m for c, m in per_class.items()}
    report["tail_frechet"] = float(np.mean([m["frechet"] for m in per_class.values()]))
    if all("mode_recall" in m for m in per_class.values()):
        report["tail_mode_recall"] = float(np.mean([m["mode_recall"] for m in per_class.values()]))
    files = [io.write_records(d / "generative.csv", gen_rows, list(gen_rows[0])),
             io.write_json(d / "report.json", report)]
    if (d / "downstream.csv").exists() and not reference:
        files.append(d / "downstream.csv")
    run.manifest("eval", files, "reference", "knn-embedding", "shuffle")
    return report


def cmd_ablate(run: Run, cells=None):
    """Every cell of the {coarse, subclass} x {standard, optimised} grid over all replicates."""
    from scipy.stats import wilcoxon

    from .plots import ablation_bars

    cfg = run.cfg
    cells = cells or list(pl.CELLS)
    data = pl.stage_generate(cfg)
    baseline = pl.downstream(cfg, data.train, data.test)
    fits, runs, rows = {}, [], []
    for rep in range(cfg.replicates):
        for name in cells:
            r = pl.run_cell(cfg, data, name, rep, fits)
            runs.append(r)
            fr = float(np.mean([m["frechet"] for m in r.gen_metrics.values()]))
            mr = float(np.mean([m["mode_recall"] for m in r.gen_metrics.values()]))
            for row in r.classification:
                rows.append({"cell": name, "replicate": rep, **row, "tail_frechet": fr, "tail_mode_recall": mr})
    summary = pl.summarize_cells(runs, baseline)
    best = "subclass+optimized"
    if best in summary:
        for name in cells:
            if name == best:
                continue
            diff = np.subtract(summary[best]["bacc_runs"], summary[name]["bacc_runs"])
            p = float(wilcoxon(diff).pvalue) if np.any(diff != 0) else None
            summary[name]["wilcoxon_p_vs_combined"] = p
    d = run.dir("ablation")
    files = [
        io.write_records(d / "ablation.csv", rows,
                         ["cell", "replicate", "classifier_seed", "bacc", "macro_f1", "tail_frechet",
                          "tail_mode_recall"]),
        io.write_json(d / "summary.json", summary),
        ablation_bars(summary, d / "bacc.svg"),
    ]
    run.manifest("ablation", files, "generate", "gmm")
    return summary


def cmd_run_all(run: Run, ablation_grid: bool = False):
    cmd_generate(run)
    if run.subclass:
        cmd_fit_subclasses(run)
    if run.learned:
        cmd_optimize_sources(run)
    cmd_train(run)
    cmd_sample(run)
    report = cmd_evaluate(run)
    if ablation_grid:
        cmd_ablate(run)
    return report


# --- entry point ----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="subflow", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="JSON pipeline config (defaults built in)")
        p.add_argument("--seed", type=int, help="override the master seed")
        p.add_argument("--out", help=f"output directory (relative paths resolve under ${OUT_ROOT_ENV})")
        return p

    add("generate", "sample the benchmark and write tiers/targets")
    add("fit-subclasses", "fit per-class mixtures and write assignments")
    add("optimize-sources", "fit per-subclass Gaussian sources")
    add("train", "train the velocity field")
    add("sample", "generate augmentation rows and evaluation draws")
    p = add("evaluate", "score generated samples and downstream classifiers")
    p.add_argument("--generated", help="dataset CSV to score instead of samples/generated.csv")
    p.add_argument("--reference", help="dataset CSV to compare against instead of a fresh reference draw")
    p = add("run-all", "every stage in order")
    p.add_argument("--ablation-grid", action="store_true", help="also run the four-cell ablation")
    p = add("ablate", "the four-cell conditioning x source ablation")
    p.add_argument("--cells", nargs="+", choices=list(pl.CELLS))
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        run = load_config(args.config, args.seed, args.out)
    except (pl.ConfigError, SpecError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        if args.command == "generate":
            cmd_generate(run)
        elif args.command == "fit-subclasses":
            cmd_fit_subclasses(run)
        elif args.command == "optimize-sources":
            cmd_optimize_sources(run)
        elif args.command == "train":
            cmd_train(run)
        elif args.command == "sample":
            cmd_sample(run)
        elif args.command == "evaluate":
            report = cmd_evaluate(run, args.generated, args.reference)
            print(json.dumps({k: v for k, v in report.items() if k != "generative"}, indent=2, sort_keys=True))
        elif args.command == "run-all":
            report = cmd_run_all(run, args.ablation_grid)
            print(json.dumps({k: v for k, v in report.items() if k != "generative"}, indent=2, sort_keys=True))
        elif args.command == "ablate":
            summary = cmd_ablate(run, args.cells)
            print(json.dumps({n: {k: v for k, v in s.items() if not k.endswith("_runs")}
                              for n, s in summary.items()}, indent=2, sort_keys=True))
    except (FileNotFoundError, ValueError, FloatingPointError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
