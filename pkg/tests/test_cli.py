import csv
import json

import pytest

from diffwitness import cli


def _run(capsys, *argv):
    code = cli.main(list(argv))
    return code, capsys.readouterr()


def _config(tmp_path, **kw):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(kw))
    return str(path)


SHORT = {"iterations": 40, "schedule": [[0, 10.0], [20, 1.0]]}


def test_detect_separated(capsys):
    code, out = _run(capsys, "detect", "cube", "cube", "--pose2", "3,0,0")
    data = json.loads(out.out)
    assert code == 0
    assert data["distance"] == pytest.approx(2.0) and data["signed_distance"] == pytest.approx(2.0)
    assert data["penetrating"] is False


def test_detect_penetrating(capsys):
    code, out = _run(capsys, "detect", "cube", "cube", "--pose2", "0.8,0,0")
    assert code == 10
    assert json.loads(out.out)["signed_distance"] == pytest.approx(-0.2)


def test_detect_full_pose_json(capsys, tmp_path):
    pose = tmp_path / "p.json"
    pose.write_text(json.dumps({"R": [[1, 0, 0], [0, 1, 0], [0, 0, 1]], "t": [0, 0, 5]}))
    code, out = _run(capsys, "detect", "cube", "cube", "--pose2", str(pose))
    assert code == 0 and json.loads(out.out)["distance"] == pytest.approx(4.0)


def test_detect_missing_file(capsys, tmp_path):
    code, out = _run(capsys, "detect", str(tmp_path / "nope.obj"), "cube")
    assert code == 2 and "error" in out.err


def test_detect_obj_file(capsys, tmp_path):
    from diffwitness.geom import write_obj
    from diffwitness.shapes import box_mesh
    write_obj(box_mesh(), tmp_path / "box.obj")
    code, out = _run(capsys, "detect", str(tmp_path / "box.obj"), "cube", "--pose2", "0,2,0")
    assert code == 0 and json.loads(out.out)["distance"] == pytest.approx(1.0)


def test_unknown_config_key(capsys, tmp_path):
    code, out = _run(capsys, "bench", "--config", _config(tmp_path, shapes="cube", bogus=1))
    assert code == 2 and "bogus" in out.err


def test_config_parsing():
    exp = cli.ExperimentConfig.from_dict({"shapes": "concave", "n_pairs": 2, "beta": 1e-3, "epsilon": 2e-3,
                                          "initial_step": 20, "methods": "rs0"})
    cfg = exp.base()
    assert exp.methods == ("rs0",) and exp.shapes[0] == "torus"
    assert cfg.loss.beta == 1e-3 and cfg.sampling.epsilon == 2e-3 and cfg.schedule[0] == (0, 20.0)


def test_gradcheck_icosahedron(capsys):
    code, out = _run(capsys, "gradcheck", "--shapes", "icosahedron", "--n-probes", "100")
    assert code == 0
    errs = {l.split()[0]: float(l.split()[3]) for l in out.out.splitlines()}
    assert max(errs[b] for b in ("J11", "J22", "J12", "J21")) < 1e-4


def test_gradcheck_detects_corruption(capsys):
    code, _ = _run(capsys, "gradcheck", "--n-probes", "10", "--corrupt-cross", "0.5")
    assert code != 0


def test_gradcheck_no_probes(capsys):
    with pytest.warns(UserWarning):
        code, out = _run(capsys, "gradcheck", "--n-probes", "0")
    assert code == 0 and "vacuous" in out.out


def test_bench_ours_beats_analytical(capsys, tmp_path):
    cfg = _config(tmp_path, shapes="sphere642,capsule", n_pairs=16, tasks_per_pair=4,
                  methods=["ours", "analytical"])
    code, out = _run(capsys, "bench", "--config", cfg, "--out", str(tmp_path / "o"))
    assert code == 0
    ours = json.loads((tmp_path / "o" / "summary_ours.json").read_text())
    ana = json.loads((tmp_path / "o" / "summary_analytical.json").read_text())
    assert ours["n_tasks"] == 64 and ours["acc"] > ana["acc"]
    assert "D5" in out.out


def test_sweep_margin_five_cells(capsys, tmp_path):
    cfg = _config(tmp_path, shapes="sphere162,cube", n_pairs=1, tasks_per_pair=2, sweep_axis="margin",
                  sweep_grid=[0, 1e-5, 1e-4, 1e-3, 1e-2], **SHORT)
    code, _ = _run(capsys, "sweep", "--config", cfg, "--out", str(tmp_path / "s"))
    assert code == 0
    cells = sorted((tmp_path / "s").glob("*.json"))
    assert len(cells) == 5
    data = json.loads(cells[0].read_text())
    assert sorted(data) == ["acc", "axis", "d5", "d9", "method", "n_tasks", "value"]


def test_sweep_needs_axis(capsys, tmp_path):
    code, _ = _run(capsys, "sweep", "--config", _config(tmp_path, shapes="cube"))
    assert code == 2


def _rows(path):
    with open(path) as fh:
        return [(r["task_id"], r["method"], r["final_loss"], r["iters"]) for r in csv.DictReader(fh)]


def test_worker_count_gives_identical_csv(capsys, tmp_path):
    cfg = _config(tmp_path, shapes="convex", n_pairs=2, tasks_per_pair=3, **SHORT)
    assert _run(capsys, "bench", "--config", cfg, "--workers", "1", "--out", str(tmp_path / "a"))[0] == 0
    assert _run(capsys, "bench", "--config", cfg, "--workers", "2", "--out", str(tmp_path / "b"))[0] == 0
    a, b = _rows(tmp_path / "a" / "records.csv"), _rows(tmp_path / "b" / "records.csv")
    assert len(a) == 6 and a == b
