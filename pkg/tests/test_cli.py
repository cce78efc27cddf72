import json

import pytest

from subflow import io
from subflow.cli import main

TINY = {
    "fm": {"steps": 40, "hidden": [16, 16], "batch_size": 64},
    "source": {"steps": 25},
    "sampler": {"steps": 8, "eval_count": 200},
    "eval": {"classifier_seeds": [0], "test_per_class": 100, "reference_per_class": 500},
}


@pytest.fixture
def cfg_path(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(TINY))
    return p


@pytest.fixture(scope="module")
def full_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    p = root / "cfg.json"
    p.write_text(json.dumps(TINY))
    assert main(["run-all", "--config", str(p), "--out", str(root / "a")]) == 0
    return root / "a", p


def test_generate_idempotent_and_creates_dir(cfg_path, tmp_path):
    out = tmp_path / "nested" / "run"
    assert main(["generate", "--config", str(cfg_path), "--out", str(out)]) == 0
    first = (out / "data" / "train.csv").read_bytes()
    assert main(["generate", "--config", str(cfg_path), "--out", str(out)]) == 0
    assert (out / "data" / "train.csv").read_bytes() == first
    tiers = io.read_json(out / "data" / "tiers.json")
    assert tiers["targets"]["7"] >= tiers["counts"]["7"]
    man = io.read_json(out / "data" / "manifest.json")
    assert set(man["files"]) == {"train.csv", "test.csv", "spec.json", "tiers.json"}
    assert "generate" in man["seeds"] and len(man["config_hash"]) == 16


def test_seed_flag_changes_data(cfg_path, tmp_path):
    main(["generate", "--config", str(cfg_path), "--out", str(tmp_path / "a")])
    main(["generate", "--config", str(cfg_path), "--out", str(tmp_path / "b"), "--seed", "9"])
    assert (tmp_path / "a/data/train.csv").read_bytes() != (tmp_path / "b/data/train.csv").read_bytes()


def test_env_output_root(cfg_path, tmp_path, monkeypatch):
    monkeypatch.setenv("SUBFLOW_OUT_ROOT", str(tmp_path / "root"))
    assert main(["generate", "--config", str(cfg_path), "--out", "rel"]) == 0
    assert (tmp_path / "root" / "rel" / "data" / "train.csv").exists()


@pytest.mark.parametrize("body,field", [
    ('{"fm": {"stepz": 3}}', "fm.stepz"),
    ('{"gmm": {"K_max": 0}}', "gmm"),
    ('{"bogus": 1}', "bogus"),
    ('{"fm": {"steps": 3,}}', "cfg.json:1"),
])
def test_malformed_config_exit_2(tmp_path, capsys, body, field):
    p = tmp_path / "cfg.json"
    p.write_text(body)
    assert main(["generate", "--config", str(p), "--out", str(tmp_path / "o")]) == 2
    assert field in capsys.readouterr().err


def test_missing_upstream_exit_1(cfg_path, tmp_path, capsys):
    assert main(["train", "--config", str(cfg_path), "--out", str(tmp_path / "empty")]) == 1
    assert "missing" in capsys.readouterr().err


def test_run_all_artifacts(full_run):
    out, _ = full_run
    assert len(io.read_records(out / "sources" / "trace.csv")) == TINY["source"]["steps"]
    assert len(io.read_records(out / "model" / "loss.csv")) == TINY["fm"]["steps"]
    ebic = io.read_records(out / "subclasses" / "ebic.csv")
    assert {int(r["K"]) for r in ebic} == set(range(1, 7))
    summary = io.read_json(out / "subclasses" / "split_summary.json")
    assert {"B", "K", "n_unsplit", "min_n_ck_split"} <= set(summary)
    train = io.read_dataset(out / "data" / "train.csv")
    assigned = io.read_dataset(out / "subclasses" / "assignments.csv")
    assert len(assigned) == len(train) and (assigned.subclass >= 0).all()
    diag = io.read_json(out / "sources" / "diagnostics.json")
    assert {"before", "after"} == set(diag)
    report = io.read_json(out / "eval" / "report.json")
    assert {"real-only", "augmented", "tail_frechet", "knn_purity"} <= set(report)
    for stage in ("data", "subclasses", "sources", "model", "samples", "eval"):
        assert (out / stage / "manifest.json").exists()


def test_caps_stable_across_reruns(full_run):
    out, cfg = full_run
    caps = (out / "sources" / "caps.json").read_bytes()
    assert main(["optimize-sources", "--config", str(cfg), "--out", str(out)]) == 0
    assert (out / "sources" / "caps.json").read_bytes() == caps


def test_evaluate_real_vs_real(full_run, capsys):
    out, cfg = full_run
    train = str(out / "data" / "train.csv")
    assert main(["evaluate", "--config", str(cfg), "--out", str(out), "--generated", train,
                 "--reference", train]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["tail_frechet"] == pytest.approx(0.0, abs=1e-9)


def test_ablate_subset(cfg_path, tmp_path):
    cfg = dict(TINY, replicates=1)
    cfg_path.write_text(json.dumps(cfg))
    out = tmp_path / "abl"
    assert main(["ablate", "--config", str(cfg_path), "--out", str(out),
                 "--cells", "coarse+standard", "subclass+optimized"]) == 0
    rows = io.read_records(out / "ablation" / "ablation.csv")
    assert {r["cell"] for r in rows} == {"coarse+standard", "subclass+optimized"}
    assert (out / "ablation" / "bacc.svg").exists()
