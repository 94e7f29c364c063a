import json

import numpy as np
import pytest

from conftest import SMALL_RUN
from rgt.autodiff import serialize
from rgt.cli import main
from rgt.data import save_png
from rgt.radiomics import QUALIFIED_NAMES


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "small.json"
    cfg.write_text(json.dumps(SMALL_RUN))
    assert main(["gen-data", "--config", str(cfg), "--out", str(root / "data")]) == 0
    return root, cfg


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_gen_data_layout(workspace):
    root, _ = workspace
    data = root / "data"
    for name in ("train.jsonl", "test.jsonl", "priors.json", "test_gt.json", "test_labels.json"):
        assert (data / name).exists()
    assert len((data / "train.jsonl").read_text().splitlines()) == 24


def test_train_is_repeatable_and_writes_reports(workspace, capsys):
    root, cfg = workspace
    lines = []
    for run_dir in ("a", "b"):
        code, out, _ = run(capsys, "train", "--config", cfg, "--data", root / "data",
                           "--out", root / run_dir)
        assert code == 0
        lines.append(out.strip().splitlines()[-1])
    assert lines[0] == lines[1]
    final = json.loads(lines[0])
    assert final["epoch"] == 2 and "test_mean_auc" in final and "test_iou_acc@0.1" in final
    for name in ("config.json", "metrics.csv", "pred_scores.json", "pred_boxes.json",
                 "localization.csv", "localization.md", "checkpoint/manifest.json"):
        assert (root / "a" / name).exists()


def test_train_flag_overrides_config(workspace, capsys, caplog):
    root, cfg = workspace
    caplog.set_level("INFO", logger="rgt")
    code, _, _ = run(capsys, "train", "--config", cfg, "--data", root / "data",
                       "--out", root / "lam", "--lambda", "0.9", "--byoa-t", "0.2")
    assert code == 0 and '"lam": 0.9' in caplog.text
    saved = json.loads((root / "lam" / "config.json").read_text())
    assert saved["loss"]["lam"] == 0.9 and saved["byoa"]["keep_fraction"] == 0.2


def test_eval_loc_identical_boxes_is_perfect(workspace, capsys):
    root, _ = workspace
    gt = root / "data" / "test_gt.json"
    code, out, _ = run(capsys, "eval-loc", "--pred", gt, "--gt", gt, "--out", root / "loc")
    assert code == 0
    rows = (root / "loc.csv").read_text().splitlines()[1:]
    assert len(rows) == 7
    for row in rows:
        assert row.split(",")[2:] == ["1.00", "1.00", "1.000"]
    assert out == (root / "loc.md").read_text()


def test_eval_cls_from_training_output(workspace, capsys):
    root, cfg = workspace
    if not (root / "a" / "pred_scores.json").exists():
        run(capsys, "train", "--config", cfg, "--data", root / "data", "--out", root / "a")
    code, out, _ = run(capsys, "eval-cls", "--pred", root / "a" / "pred_scores.json",
                       "--labels", root / "data" / "test.jsonl")
    assert code == 0 and out.startswith("| Method |")


def test_byoa_command(tmp_path, capsys):
    amap = np.zeros((20, 20))
    amap[5:10, 5:10] = 1.0
    serialize.save(tmp_path / "m.rgt", amap)
    (tmp_path / "p.json").write_text(json.dumps({"0": {"height": 8, "width": 8}}))
    code, out, _ = run(capsys, "byoa", "--map", tmp_path / "m.rgt", "--priors",
                       tmp_path / "p.json", "--class", 0, "--overlay", tmp_path / "o.png")
    boxes = json.loads(out)
    assert code == 0 and len(boxes) == 1
    b = boxes[0]
    assert (b["w"], b["h"]) == (8, 8) and b["x"] <= 5 and b["x"] + b["w"] >= 10
    assert (tmp_path / "o.png").exists()


def test_extract_command(tmp_path, capsys):
    img = np.random.default_rng(0).integers(0, 255, (16, 16)).astype(np.uint8)
    save_png(tmp_path / "i.png", img)
    assert run(capsys, "extract", "--image", tmp_path / "i.png", "--box", "2,2,10,10",
               "--out", tmp_path / "f.json")[0] == 0
    feats = json.loads((tmp_path / "f.json").read_text())
    assert len(feats["values"]) == 107 and list(feats["features"]) == list(QUALIFIED_NAMES)
    assert run(capsys, "extract", "--image", tmp_path / "i.png", "--box", "2,2,10,10",
               "--out", tmp_path / "f.csv")[0] == 0
    header = (tmp_path / "f.csv").read_text().splitlines()[0].split(",")
    assert header[-107:] == list(QUALIFIED_NAMES)


@pytest.mark.parametrize("argv, code", [
    (["train", "--bogus"], 2),
    (["nosuch"], 2),
    (["train", "--config", "/nonexistent/c.json"], 2),
    (["byoa", "--map", "/nonexistent.rgt", "--priors", "p.json", "--class", "0"], 3),
    (["extract", "--image", "/nonexistent.png", "--box", "0,0,2,2", "--out", "x.json"], 3),
])
def test_exit_codes_and_single_line_errors(argv, code, capsys, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    try:
        got = main(argv)
    except SystemExit as e:
        got = e.code
    err = capsys.readouterr().err.strip().splitlines()
    assert got == code
    assert len(err) == 1 and err[0].startswith("error: ")


def test_unknown_config_key_is_a_config_error(tmp_path, capsys):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"train": {"epoch": 3}}))
    code, _, err = run(capsys, "train", "--config", p)
    assert code == 2 and "unknown key train.epoch" in err


def test_missing_data_is_a_data_error(tmp_path, capsys):
    code, _, err = run(capsys, "train", "--data", tmp_path / "empty")
    assert code == 3 and "gen-data" in err


@pytest.mark.slow
def test_gradcheck_command(capsys):
    code, out, _ = run(capsys, "gradcheck")
    assert code == 0 and json.loads(out)["max_rel_error"] < 1e-4
