import csv
import io
import json
import subprocess
import sys

import numpy as np
import pytest

from edgevfm import cli
from edgevfm.cost_model import report
from edgevfm.embedding_engine import EmbeddingBank, classify, read_pgm, save_bank
from edgevfm.fixtures import data_path
from edgevfm.selector import SelectionRequest, select_subnet
from edgevfm.sim_runtime import SimConfig, load_timeline, run_sim

CAL = str(data_path("reference_calibration.csv"))
PROFILE = str(data_path("profile_12scenes.csv"))
TIMELINE = str(data_path("timeline_12scenes.json"))
TAXONOMY = str(data_path("taxonomy_20.json"))
MOCK = str(data_path("mock_agent.json"))


def run(capsys, *argv):
    try:
        code = cli.main([str(a) for a in argv])
    except SystemExit as exc:
        code = exc.code
    out = capsys.readouterr()
    return code, out.out, out.err


def test_space_representative(capsys):
    code, out, _ = run(capsys, "space", "representative", "--format", "json")
    assert code == 0
    records = json.loads(out)
    assert len(records) == 5
    assert records[3]["depths"] == [3, 3, 15, 3]


def test_space_enumerate_limit(capsys):
    code, out, _ = run(capsys, "space", "enumerate", "--limit", "3", "--format", "csv")
    assert code == 0
    assert len(out.strip().splitlines()) == 4


def test_cost_matches_library(capsys, space, reps, calibration):
    code, out, _ = run(capsys, "cost", "--subnet", "Min", "--calib", CAL)
    assert code == 0
    doc = json.loads(out)
    assert doc["latency_ms"] == 25.0
    assert doc == json.loads(report(space, reps["Min"], 224, calibration).to_json())


def test_select_matches_library(capsys, profile12):
    code, out, _ = run(capsys, "select", "--profile", PROFILE, "--scene", "kitchen", "--alpha", "0.9")
    assert code == 0
    lib = select_subnet(profile12, SelectionRequest("kitchen", 0.9))
    assert json.loads(out) == json.loads(lib.to_json())


def test_select_sweep(capsys):
    code, out, _ = run(capsys, "select", "sweep", "--profile", PROFILE, "--format", "csv")
    assert code == 0
    rows = list(csv.reader(io.StringIO(out)))
    assert rows[-1][0] == "1.0" and rows[-1][-1] == "1.0"


def test_simulate_run_matches_library(capsys, profile12, space, calibration):
    code, out, _ = run(capsys, "simulate", "--timeline", TIMELINE, "--profile", PROFILE,
                       "--calib", CAL, "--alpha", "0.95")
    assert code == 0
    lib = run_sim(load_timeline(TIMELINE), profile12, calibration, space, SimConfig(alpha=0.95))
    assert json.loads(out) == json.loads(lib.to_json())


def test_simulate_curve(capsys):
    code, out, _ = run(capsys, "simulate", "curve", "--timeline", TIMELINE, "--profile", PROFILE,
                       "--calib", CAL, "--format", "csv")
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(out)))
    assert len(rows) == 9
    flops = [float(r["avg_flops"]) for r in rows]
    acc = [float(r["avg_accuracy"]) for r in rows]
    assert flops == sorted(flops) and acc == sorted(acc)


def test_group_and_remap(capsys, tmp_path):
    code, out, _ = run(capsys, "group", "--taxonomy", TAXONOMY, "--pmin", "0.15")
    assert code == 0
    grouping = tmp_path / "grouping.json"
    grouping.write_text(out)
    labels = tmp_path / "labels.json"
    labels.write_text(json.dumps([["dog", "pizza"], ["car", "canoe"]]))
    code, out, _ = run(capsys, "remap", "--grouping", grouping, "--map", labels)
    assert code == 0
    names = [g["name"] for g in json.loads(grouping.read_text())["groups"]]
    doc = json.loads(out)
    assert doc["ignore_index"] == len(names)
    assert doc["labels"] == [[names.index("mammal"), len(names)], [names.index("vehicle"), names.index("boat")]]


def test_agent_render_call_parse(capsys, tmp_path):
    classes = tmp_path / "classes.json"
    classes.write_text(json.dumps(["wall", "sink", "road", "stove"]))
    code, prompt, _ = run(capsys, "agent", "render", "--variant", "filter_gpt5", "--scene", "kitchen", "--classes", classes)
    assert code == 0 and "in a scene of kitchen." in prompt
    code, raw, _ = run(capsys, "agent", "call", "--variant", "filter_gpt5", "--scene", "kitchen",
                       "--classes", classes, "--config", MOCK)
    assert code == 0
    called = json.loads(raw)
    assert called["kept"] == ["sink", "stove", "wall"]
    response = tmp_path / "resp.json"
    response.write_text(json.dumps(called["verdicts"]))
    code, out, _ = run(capsys, "agent", "parse", "--variant", "filter_gpt5", "--classes", classes, "--response", response)
    assert code == 0
    assert json.loads(out) == called


def test_agent_parse_error_exit_code(capsys, tmp_path):
    classes = tmp_path / "classes.json"
    classes.write_text(json.dumps(["a", "b"]))
    response = tmp_path / "resp.json"
    response.write_text('{"a": 1, "b": 2}')
    code, out, err = run(capsys, "agent", "parse", "--classes", classes, "--response", response)
    assert code == 1 and out == "" and "value" in err


def test_agent_score(capsys, tmp_path):
    r = tmp_path / "r.json"
    t = tmp_path / "t.json"
    r.write_text(json.dumps([["a", "b", "c"], ["d"]]))
    t.write_text(json.dumps([["a", "d"], ["d"]]))
    code, out, _ = run(capsys, "agent", "score", "--responses", r, "--truth", t)
    doc = json.loads(out)
    assert code == 0 and doc["recall"] == 0.75 and doc["precision"] == pytest.approx(2 / 3)


def test_agent_remote_failure_exit_code(capsys, tmp_path):
    cfg = tmp_path / "remote.json"
    cfg.write_text(json.dumps({"endpoint_url": "http://127.0.0.1:9/x", "model_name": "m",
                               "timeout_ms": 200, "max_retries": 0}))
    code, _, err = run(capsys, "agent", "call", "--variant", "scene_annotation", "--config", cfg)
    assert code == 2 and "error" in err


def test_infer_classify_and_segment(capsys, tmp_path, rng):
    bank = EmbeddingBank(("a", "b", "c"), rng.normal(size=(3, 4)))
    bank_path = tmp_path / "bank.bin"
    save_bank(bank, bank_path)
    vec = tmp_path / "v.npy"
    q = rng.normal(size=4)
    np.save(vec, q)
    code, out, _ = run(capsys, "infer", "classify", "--bank", bank_path, "--input", vec, "--top-k", "3")
    assert code == 0
    ranked = json.loads(out)[0]
    assert [(r["label"], r["similarity"]) for r in ranked] == classify(q, bank, 3)
    grid = tmp_path / "g.npy"
    np.save(grid, bank.vectors[[0, 1, 2, 0]].reshape(2, 2, 4).astype(np.float64))
    pgm = tmp_path / "seg.pgm"
    code, _, _ = run(capsys, "infer", "segment", "--bank", bank_path, "--input", grid, "--out-size", "4x4", "--out", pgm)
    assert code == 0
    seg = read_pgm(pgm)
    assert seg.class_indices[0].tolist() == [0, 0, 1, 1]
    assert seg.labels == ("a", "b", "c")


def test_eval_miou(capsys, tmp_path):
    from edgevfm.embedding_engine import SegmentationMap, write_pgm

    write_pgm(SegmentationMap(np.array([[0, 1], [1, 1]])), tmp_path / "p.pgm", 2)
    write_pgm(SegmentationMap(np.array([[0, 0], [1, 1]])), tmp_path / "g.pgm", 2)
    code, out, _ = run(capsys, "eval", "miou", "--pred", tmp_path / "p.pgm", "--gt", tmp_path / "g.pgm", "--num-classes", "2")
    assert code == 0
    assert json.loads(out)["miou"] == pytest.approx(7 / 12)


def test_train_toy_checkpoint(capsys, tmp_path):
    ckpt = tmp_path / "ckpt.bin"
    code, out, _ = run(capsys, "train-toy", "--steps", "5", "--seed", "1", "--checkpoint", ckpt)
    assert code == 0
    assert out.splitlines()[0] == "step,min_loss,max_loss,mean_loss"
    assert len(out.splitlines()) == 7
    assert ckpt.read_bytes()[:8] == b"AVFMEMB1"


@pytest.mark.parametrize(
    "argv",
    [
        ["select", "--profile", PROFILE, "--scene", "kitchen", "--alpha", "1.5"],
        ["cost", "--subnet", "d3-3-9-3_c48-96-192-1024"],
        ["cost", "--subnet", "Min", "--resolution", "230"],
        ["space", "representative", "--format", "xml"],
        ["bogus"],
    ],
)
def test_validation_exit_code(capsys, argv):
    code, out, _ = run(capsys, *argv)
    assert code == 1 and out == ""


def test_missing_file_exit_code(capsys):
    code, _, _ = run(capsys, "cost", "--subnet", "Min", "--calib", "/no/such/file.csv")
    assert code == 2


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "edgevfm", "space", "representative", "--format", "csv"],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0
    assert proc.stdout.splitlines()[1].startswith("Min,")
