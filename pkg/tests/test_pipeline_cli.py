import csv
import json
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from conftest import make_sequence, write_manifest
from tlstack.cli import main
from tlstack.container import read_stack
from tlstack.pipeline import ConfigError, PipelineConfig, fitness, run_stack


def tree_bytes(root):
    root = Path(root)
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture
def thirteen(tmp_path):
    recs = make_sequence(tmp_path, "A", "D" * 13, explicit=True)
    return write_manifest(tmp_path / "m.jsonl", recs)


def test_one_window_one_stack(tmp_path, thirteen):
    out = run_stack(PipelineConfig(manifest=thirteen, out_dir=tmp_path / "out", jobs=1))
    assert out["written"] == 1 and out["skipped"] == 12 and out["failed"] == 0
    stacks = list((tmp_path / "out" / "stacks").rglob("*.tlf5"))
    assert [p.name for p in stacks] == ["img_012.tlf5"]
    s = read_stack(stacks[0])
    assert s.provenance["window"]["indices"] == list(range(12))
    assert s.provenance["window"]["k"] == 12
    assert s.provenance["modality"] == "day"
    report = [json.loads(l) for l in (tmp_path / "out" / "skip_report.jsonl").read_text().splitlines()]
    assert len(report) == 12 and all("reason" in r for r in report)


def test_empty_manifest(tmp_path, capsys):
    m = tmp_path / "empty.jsonl"
    m.write_text("")
    assert main(["stack", str(m), "-o", str(tmp_path / "o"), "--json"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["written"] == 0 and out["skipped"] == 0


def test_stack_deterministic_across_jobs(tmp_path):
    recs = make_sequence(tmp_path, "A", "DDDNNDDDNNDDD", explicit=True) + \
           make_sequence(tmp_path, "B", "NNNNDDDDNNNN", seed=5, explicit=True)
    m = write_manifest(tmp_path / "m.jsonl", recs)
    trees = []
    for name, jobs in (("a", 1), ("b", 1), ("c", 3)):
        assert main(["stack", str(m), "-k", "3", "-j", str(jobs), "-o", str(tmp_path / name)]) == 0
        trees.append(tree_bytes(tmp_path / name))
    assert trees[0] == trees[1] == trees[2]
    assert any(k.endswith(".tlf5") for k in trees[0])


def test_decode_failure_exit_code(tmp_path, capsys):
    recs = make_sequence(tmp_path, "A", "DDDD", explicit=True)
    (tmp_path / recs[3]["path"]).write_bytes(b"not a png")
    m = write_manifest(tmp_path / "m.jsonl", recs)
    assert main(["stack", str(m), "-k", "2", "-j", "1", "-o", str(tmp_path / "o"), "--json"]) == 1
    out = json.loads(capsys.readouterr().out)
    assert out["failed"] == 1 and out["written"] == 1
    report = (tmp_path / "o" / "skip_report.jsonl").read_text()
    assert "img_003.png" in report


def test_debug_png_option(tmp_path):
    recs = make_sequence(tmp_path, "A", "DDD", explicit=True)
    m = write_manifest(tmp_path / "m.jsonl", recs)
    assert main(["stack", str(m), "-k", "2", "--debug-png", "-o", str(tmp_path / "o")]) == 0
    names = {p.name for p in (tmp_path / "o" / "debug" / "A").iterdir()}
    assert "img_002_T.png" in names and "img_002_background_grey.png" in names


def test_bad_config_values(tmp_path, thirteen):
    assert main(["stack", str(thirteen), "-k", "0", "-o", str(tmp_path / "o")]) == 2
    assert main(["stack", str(thirteen), "--ridge", "-1", "-o", str(tmp_path / "o")]) == 2
    with pytest.raises(ConfigError):
        PipelineConfig(max_eval_fraction=0)


def test_config_file_and_flag_precedence(tmp_path, thirteen):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"k": 5, "stride": 2, "out_dir": str(tmp_path / "fromfile")}))
    assert main(["stack", str(thirteen), "--config", str(cfg), "-k", "12", "--json"]) == 0
    assert len(list((tmp_path / "fromfile").rglob("*.tlf5"))) == 1
    s = read_stack(next((tmp_path / "fromfile").rglob("*.tlf5")))
    assert s.provenance["color_fit"]["stride"] == 2
    assert PipelineConfig.from_sources("split", {"k": 4}).clusters == 4
    assert PipelineConfig.from_sources("stack", {"k": 4}).window == 4
    with pytest.raises(ConfigError, match="unknown"):
        PipelineConfig.from_sources("stack", {"colour": 1})


# --- fitness ----------------------------------------------------------------

@pytest.mark.parametrize("a, b, want", [(0.632, 0.383, 0.4079), (0.762, 0.475, 0.5037),
                                        (1.0, 1.0, 1.0), (0.0, 0.0, 0.0)])
def test_fitness(a, b, want):
    assert abs(fitness(a, b) - want) <= 1e-12


def test_fitness_cli(capsys):
    assert main(["fitness", "0.762", "0.475", "--json"]) == 0
    assert json.loads(capsys.readouterr().out)["fitness"] == pytest.approx(0.5037, abs=1e-12)
    assert main(["fitness", "1.2", "0.5"]) == 2


# --- export -----------------------------------------------------------------

def test_export(tmp_path, thirteen):
    run_stack(PipelineConfig(manifest=thirteen, out_dir=tmp_path / "o", jobs=1))
    stack_file = next((tmp_path / "o").rglob("*.tlf5"))
    assert main(["export", str(stack_file), "-o", str(tmp_path / "png")]) == 0
    s = read_stack(stack_file)
    t = np.asarray(Image.open(tmp_path / "png" / "img_012_T.png"))
    assert np.array_equal(t, np.round(s.planes[3].astype(np.float64) * 255).astype(np.uint8))

    bad = tmp_path / "bad.tlf5"
    bad.write_bytes(b"JUNK" + stack_file.read_bytes()[4:])
    assert main(["export", str(bad), "-o", str(tmp_path / "png2")]) == 1
    assert not (tmp_path / "png2").exists() or not any((tmp_path / "png2").iterdir())


# --- ingest -----------------------------------------------------------------

def test_ingest_summary(tmp_path, capsys):
    recs = make_sequence(tmp_path, "A", "DDN") + make_sequence(tmp_path, "B", "NN", seed=2)
    m = write_manifest(tmp_path / "m.jsonl", recs)
    assert main(["ingest", str(m), "--check-images", "--json"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["cameras"]["A"] == {"frames": 3, "day": 2, "night": 1}
    assert out["cameras"]["B"]["night"] == 2


def test_ingest_bad_manifest(tmp_path):
    m = tmp_path / "m.jsonl"
    m.write_text('{"path": "x.png"}\n')
    assert main(["ingest", str(m)]) == 2


# --- split / stats ------------------------------------------------------------

@pytest.fixture
def labelled_dataset(tmp_path):
    recs = []
    for i, cam in enumerate("ABCDEF"):
        recs += make_sequence(tmp_path, cam, "DDNN", explicit=True, seed=i)
    m = write_manifest(tmp_path / "m.jsonl", recs)
    r = np.random.default_rng(0)
    for cam in "ABCDEF":
        (tmp_path / "labels" / cam).mkdir(parents=True)
        for i in range(4):
            lines = [f"{r.integers(0, 3)} 0.5 0.5 {r.uniform(0.05, 0.6):.4f} {r.uniform(0.05, 0.6):.4f}"
                     for _ in range(r.integers(0, 4))]
            (tmp_path / "labels" / cam / f"img_{i:03d}.txt").write_text("\n".join(lines))
    return tmp_path, m


def test_split_cli(labelled_dataset, capsys):
    root, m = labelled_dataset
    out = root / "split"
    args = ["split", str(m), "--labels", str(root / "labels"), "--sizes", "4", "1", "1",
            "--force", "C=train", "--force", "A=test", "-o", str(out), "--json"]
    assert main(args) == 0
    report = json.loads(capsys.readouterr().out)
    assert "C" in report["subsets"]["train"]["cameras"]
    assert report["subsets"]["test"]["cameras"] == ["A"]
    for name in ("train", "val", "test"):
        assert (out / f"{name}.jsonl").exists()
    figs = {p.name for p in (out / "figures").iterdir()}
    assert "class_distribution.png" in figs
    assert any(n.startswith("size_distribution_") for n in figs)
    assert any(n.startswith("day_night_distribution_") for n in figs)
    assert json.loads((out / "split_report.json").read_text()) == report


def test_split_infeasible_exit(labelled_dataset, capsys):
    root, m = labelled_dataset
    args = ["split", str(m), "--labels", str(root / "labels"), "--sizes", "4", "1", "1",
            "--force", "A=val", "--force", "B=val", "-o", str(root / "s")]
    assert main(args) == 2
    assert "subset 2" in capsys.readouterr().err


def test_split_missing_sizes(labelled_dataset):
    root, m = labelled_dataset
    assert main(["split", str(m), "--labels", str(root / "labels"), "-o", str(root / "s")]) == 2


def test_stats_cli(labelled_dataset, capsys):
    root, m = labelled_dataset
    assert main(["stats", str(m), "--labels", str(root / "labels"), "-o", str(root / "st"), "--json"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["cameras"] == 6 and out["images"] == 24
    with open(root / "st" / "camera_stats.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0][:4] == ["Camera", "No. Images", "No. Day Images", "No. Night Images"]
    assert "No. Chick, Night" in rows[0]
    assert [r[0] for r in rows[1:]] == list("ABCDEF")
    assert all(r[1:4] == ["4", "2", "2"] for r in rows[1:])
    for f in out["figures"]:
        assert Path(f).stat().st_size > 0


def test_weights_demo_cli(capsys):
    assert main(["weights-demo", "--seeds", "1", "--json"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert set(out) == {"fixed.alpha", "fixed.beta", "fixed.input", "se.conv1", "se.conv2",
                        "se.w1", "se.w2", "se.input"}
    assert all(v["passed"] for v in out.values())
