"""End-to-end acceptance checks at their stated tolerances.

Each test records a PASS/FAIL verdict that the terminal summary prints,
one line per criterion. The ablation grid (four cells, three generative
replicates, default budget) is computed once per session and shared.
"""

import json
import math
import time
from dataclasses import replace
from fractions import Fraction

import numpy as np
import pytest

from conftest import record
from subflow import pipeline as pl
from subflow.cli import main
from subflow.fm import FmConfig
from subflow.gmm import fit_diag_gmm, select_num_components
from subflow.network import VelocityField
from subflow.risk import DiscreteToy, bayes_risk_enumerate, verify_total_variance
from subflow.sourceopt import OptConfig, loss_out, loss_path, objective

SEEDS = (0, 1, 2)


# --- exact risk on discrete toys -------------------------------------------

def toys():
    half, third = Fraction(1, 2), Fraction(1, 3)
    return [
        # shared start, opposite displacements, collide at t = 0
        DiscreteToy([((0,), (1,), 0, 0, half), ((0,), (-1,), 0, 1, half)], [0, half]),
        # distinct subclass means crossing at t = 1/2
        DiscreteToy([((-1, 0), (1, 0), 0, 0, half), ((1, 0), (-1, 0), 0, 1, half)], [0, half, 1]),
        # subclass labels carry no information: equal risks
        DiscreteToy([((0,), (2,), 0, 0, Fraction(1, 4)), ((0,), (-2,), 0, 0, Fraction(1, 4)),
                     ((0,), (2,), 0, 1, Fraction(1, 4)), ((0,), (-2,), 0, 1, Fraction(1, 4))], [0]),
        # two classes, three subclasses, non-uniform t law
        DiscreteToy([((0, 0), (3, 1), 0, 0, third), ((0, 0), (1, 3), 0, 1, third),
                     ((1, 1), (2, 2), 1, 0, third)], {0: Fraction(1, 4), Fraction(1, 3): Fraction(3, 4)}),
        # independent coupling of a two-point source with three targets
        DiscreteToy.independent(
            {(0, 0): [((-1,), half), ((1,), half)], (0, 1): [((-1,), half), ((1,), half)],
             (0, 2): [((-1,), half), ((1,), half)]},
            [((3,), 0, 0, third), ((-3,), 0, 1, third), ((0,), 0, 2, third)],
            [0, Fraction(1, 4), Fraction(1, 2), Fraction(3, 4)]),
        # 2-D with partial collisions at several times
        DiscreteToy([((0, 0), (2, 2), 0, 0, Fraction(1, 5)), ((2, 2), (0, 0), 0, 1, Fraction(2, 5)),
                     ((0, 2), (2, 0), 0, 1, Fraction(2, 5))], [0, half, 1]),
    ]


def test_criterion_01_total_variance_identity():
    t0 = time.perf_counter()
    results = [verify_total_variance(t) for t in toys()]
    elapsed = time.perf_counter() - t0
    worst = max(gap for _, _, gap in results)
    ok = (len(results) >= 5 and worst < 1e-10 and all(lhs >= 0 for lhs, _, _ in results)
          and elapsed < 1.0)
    record(1, ok, f"{len(results)} toys, max |lhs-rhs|={worst:.1e}, {elapsed:.3f}s")
    assert ok


def test_criterion_02_subclass_risk_dominance():
    t0 = time.perf_counter()
    pairs = [(bayes_risk_enumerate(t, "ck"), bayes_risk_enumerate(t, "c")) for t in toys()]
    elapsed = time.perf_counter() - t0
    strict = sum(ck < c for ck, c in pairs)
    ok = all(ck <= c for ck, c in pairs) and strict >= 1 and elapsed < 1.0
    record(2, ok, f"risk(c,k) <= risk(c) on all {len(pairs)} toys, strict on {strict}, {elapsed:.3f}s")
    assert ok


# --- losses and gradients --------------------------------------------------

def test_criterion_03_loss_values():
    cap = 1.7
    expected = [math.log1p(math.exp(-1)) ** 2, math.log(2) ** 2, math.log1p(math.e) ** 2]
    got = [loss_path(np.array([[r, 0.0]]), cap) for r in (0.0, cap, 2 * cap)]
    path_err = max(abs(a - b) for a, b in zip(got, expected))
    v = np.array([0.0, 1.0])
    outs = [loss_out(np.array(d), v) for d in ([[0.0, 2.5]], [[4.0, 0.0]], [[0.0, -0.3]])]
    ok = path_err <= 1e-9 and outs == [0.0, 1.0, 2.0]
    record(3, ok, f"path max err {path_err:.1e}, out endpoints {outs}")
    assert ok


def _source_fd_error(rng):
    S, B, D = 3, 12, 2
    cfg = OptConfig()
    cap = rng.uniform(1.0, 3.0, S)
    mu, ls, pr = rng.normal(size=(S, D)), 0.3 * rng.normal(size=(S, D)), rng.normal(size=(S, D))
    x1, z = rng.normal(scale=2.0, size=(S, B, D)), rng.normal(size=(S, B, D))
    _, _, g = objective(mu, ls, pr, cap, x1, z, cfg)
    arrays = {"mu": mu, "log_sigma": ls, "proto_raw": pr}
    worst = 0.0
    for name, arr in arrays.items():
        num = np.zeros_like(arr)
        for i in np.ndindex(arr.shape):
            old = arr[i]
            arr[i] = old + 1e-6
            up = objective(mu, ls, pr, cap, x1, z, cfg, grad=False)[0]
            arr[i] = old - 1e-6
            down = objective(mu, ls, pr, cap, x1, z, cfg, grad=False)[0]
            arr[i] = old
            num[i] = (up - down) / 2e-6
        worst = max(worst, np.linalg.norm(g[name] - num) / max(np.linalg.norm(num), 1e-12))
    return worst


def _network_fd_error(rng):
    net = VelocityField.init(2, [(0, 0), (0, 1), (1, 0)], [0, 1], hidden=(8, 8), emb_dim=4,
                             seed=int(rng.integers(1 << 30)), dtype=np.float64)
    x, t = rng.normal(size=(8, 2)), rng.random(8)
    rows, target = rng.integers(5, size=8), rng.normal(size=(8, 2))
    _, grads = net.loss_and_grad(x, t, rows, target)
    g_all, n_all = [], []
    for name, arr in net.params.items():
        for i in np.ndindex(arr.shape):
            old = arr[i]
            arr[i] = old + 1e-6
            up = net.loss_and_grad(x, t, rows, target)[0]
            arr[i] = old - 1e-6
            down = net.loss_and_grad(x, t, rows, target)[0]
            arr[i] = old
            g_all.append(grads[name][i])
            n_all.append((up - down) / 2e-6)
    g_all, n_all = np.array(g_all), np.array(n_all)
    return np.linalg.norm(g_all - n_all) / np.linalg.norm(n_all)


def test_criterion_04_gradient_checks():
    rng = np.random.default_rng(2024)
    src = max(_source_fd_error(rng) for _ in range(20))
    net = max(_network_fd_error(rng) for _ in range(20))
    ok = src <= 1e-4 and net <= 1e-3
    record(4, ok, f"max rel err source {src:.1e} (<=1e-4), network {net:.1e} (<=1e-3), 20 points each")
    assert ok


# --- source optimisation on the default benchmark ----------------------------

@pytest.fixture(scope="module")
def default_setup():
    cfg = pl.PipelineConfig()
    data = pl.stage_generate(cfg)
    fit = pl.stage_fit_subclasses(cfg, data.train, subclass=True)
    return cfg, data, fit


@pytest.fixture(scope="module")
def source_runs(default_setup):
    cfg, data, fit = default_setup
    runs = {}
    for s in SEEDS:
        t0 = time.perf_counter()
        res = pl.stage_optimize_sources(cfg, data.train, fit, replicate=s)
        runs[s] = (res, time.perf_counter() - t0)
    return runs


def test_criterion_05_geometry_direction(source_runs):
    lines, ok = [], True
    for s, (res, secs) in source_runs.items():
        b, a = res.before, res.after
        good = (abs(b.cos_mean_w) <= 0.1 and a.cos_mean_w - b.cos_mean_w >= 0.3
                and a.r_rel_w < b.r_rel_w and secs < 120)
        ok &= good
        lines.append(f"seed {s}: cos {b.cos_mean_w:.3f}->{a.cos_mean_w:.3f}, "
                     f"r_rel {b.r_rel_w:.3f}->{a.r_rel_w:.3f}, {secs:.0f}s")
    record(5, ok, "; ".join(lines))
    assert ok


def test_criterion_06_norm_inflation_guard(default_setup, source_runs):
    cfg, data, fit = default_setup
    worst_ratio, best_inflation = 0.0, 0.0
    for s, (res, _) in source_runs.items():
        ablated = pl.stage_optimize_sources(cfg, data.train, fit, replicate=s,
                                            config=replace(cfg.source, lambda_path=0.0))
        full = {(r["class"], r["subclass"]): r for r in res.after.per_subclass}
        for r in ablated.after.per_subclass:
            f = full[(r["class"], r["subclass"])]
            best_inflation = max(best_inflation, r["mean_norm"] / f["mean_norm"])
        worst_ratio = max(worst_ratio, max(r["mean_norm"] / r["cap"] for r in full.values()))
    ok = best_inflation >= 1.2 and worst_ratio <= 1.5
    record(6, ok, f"lambda_path=0 inflates mean |d| up to {best_inflation:.2f}x (>=1.2); "
                  f"full objective max mean|d|/cap {worst_ratio:.2f} (<=1.5)")
    assert ok


# --- mixture selection -----------------------------------------------------

def _trial(centers, seed):
    rng = np.random.default_rng(seed)
    centers = np.asarray(centers, float)
    lab = rng.integers(len(centers), size=600)
    return centers[lab] + rng.standard_normal((600, 2))


def test_criterion_07_gmm_correctness():
    configs = {1: [[0.0, 0.0]], 2: [[-4.0, 0.0], [4.0, 0.0]], 3: [[-4.0, 0.0], [4.0, 0.0], [0.0, 6.0]]}
    hits, monotone = {}, True
    for truth, centers in configs.items():
        hits[truth] = 0
        for trial in range(20):
            r = _trial(centers, 1000 * truth + trial)
            r = r - r.mean(0)
            sel = select_num_components(r, K_max=6, seed=trial)
            hits[truth] += sel.K == truth
            for K in range(1, 7):
                tr = np.asarray(fit_diag_gmm(r, K, seed=trial).trace)
                monotone &= bool(np.all(np.diff(tr) >= -1e-9 * np.abs(tr).max()))
    ok = monotone and all(h >= 18 for h in hits.values())
    record(7, ok, f"EM monotone on all runs: {monotone}; K recovered K=1 {hits[1]}/20, "
                  f"K=2 {hits[2]}/20, K=3 {hits[3]}/20")
    assert ok


# --- ablation grid at the default budget --------------------------------------

@pytest.fixture(scope="session")
def grid():
    cfg = pl.PipelineConfig()
    data = pl.stage_generate(cfg)
    baseline = pl.downstream(cfg, data.train, data.test)
    fits, runs, seconds = {}, [], {}
    for rep in SEEDS:
        for name in pl.CELLS:
            t0 = time.perf_counter()
            runs.append(pl.run_cell(cfg, data, name, rep, fits))
            seconds[name] = seconds.get(name, 0.0) + time.perf_counter() - t0
    return pl.summarize_cells(runs, baseline), seconds


def test_criterion_08_generative_improvement(grid):
    summary, seconds = grid
    full, base = summary["subclass+optimized"], summary["coarse+standard"]
    secs = seconds["subclass+optimized"] + seconds["coarse+standard"]
    ok = (full["tail_frechet"] < base["tail_frechet"] and full["tail_mode_recall"] > base["tail_mode_recall"]
          and secs < 15 * 60)
    record(8, ok, f"tail Frechet {full['tail_frechet']:.4f} vs baseline {base['tail_frechet']:.4f}; "
                  f"mode recall {full['tail_mode_recall']:.4f} vs {base['tail_mode_recall']:.4f}; {secs / 60:.1f} min")
    assert ok


def test_criterion_09_ablation_grid(grid):
    summary, _ = grid
    cells = {n: summary[n]["bacc"] for n in pl.CELLS}
    best = max(cells, key=cells.get)
    n_runs = len(summary["subclass+optimized"]["bacc_runs"])
    ok = best == "subclass+optimized" and n_runs == 9
    record(9, ok, ", ".join(f"{n} {v:.4f}" for n, v in cells.items()) + f" ({n_runs} runs each)")
    assert ok


def test_criterion_10_downstream_direction(grid):
    summary, _ = grid
    full, real = summary["subclass+optimized"], summary["real-only"]
    ok = full["bacc"] >= real["bacc"] and full["macro_f1"] >= real["macro_f1"]
    record(10, ok, f"augmented bAcc {full['bacc']:.4f} / F1 {full['macro_f1']:.4f} vs real-only "
                   f"{real['bacc']:.4f} / {real['macro_f1']:.4f}")
    assert ok


def test_criterion_11_knn_purity(default_setup):
    cfg, data, fit = default_setup
    p = pl.subclass_purity(cfg, data.train, fit)
    ok = p["delta"] >= 0.05
    record(11, ok, f"learned {p['learned']:.3f} vs matched random {p['random']:.3f} (delta {p['delta']:.3f})")
    assert ok


def test_criterion_12_run_all_determinism(tmp_path):
    # default benchmark, reduced training budget: determinism does not depend on step counts
    cfg = {"fm": {"steps": 300}, "source": {"steps": 200}, "eval": {"classifier_seeds": [0]}}
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(cfg))
    for name in ("a", "b"):
        assert main(["run-all", "--config", str(p), "--seed", "7", "--out", str(tmp_path / name)]) == 0
    files = sorted(f.relative_to(tmp_path / "a") for f in (tmp_path / "a").rglob("*")
                   if f.suffix in (".csv", ".json"))
    differing = [str(f) for f in files if (tmp_path / "a" / f).read_bytes() != (tmp_path / "b" / f).read_bytes()]
    ok = len(files) > 10 and not differing
    record(12, ok, f"{len(files)} CSV/JSON artifacts compared, {len(differing)} differ {differing[:3]}")
    assert ok
