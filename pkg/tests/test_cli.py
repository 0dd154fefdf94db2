import json
import subprocess
import sys

import numpy as np
import pytest
from oracles import SMALL_CONFIG

from tabletopseg.cli import EXIT_IO, EXIT_OK, EXIT_THRESHOLD, main
from tabletopseg.io import load_tensor, read_pgm, write_pgm


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "small.cfg").write_text(SMALL_CONFIG)
    assert main(["gen", "--seed", "3", "--count", "3", "-o", str(root / "scenes"),
                 "--config", str(root / "small.cfg")]) == EXIT_OK
    return root


def run(*argv):
    return main([str(a) for a in argv])


def test_gen_layout(work):
    names = sorted(p.name for p in (work / "scenes").iterdir())
    assert names == ["scene_00003", "scene_00004", "scene_00005"]
    manifest = json.loads((work / "scenes" / "scene_00003" / "manifest.json").read_text())
    assert manifest["seed"] == 3


def test_gen_with_predictions(work, tmp_path):
    assert run("gen", "--count", "1", "-o", tmp_path, "--config", work / "small.cfg", "--with-predictions",
               "--set", "noise.dir_angle_sigma=5") == EXIT_OK
    d = tmp_path / "scene_00000"
    dirs = load_tensor(d / "pred_dirs.uotf")
    assert dirs.shape == (120, 160, 2) and dirs.dtype == np.float32
    assert np.allclose(np.linalg.norm(dirs, axis=2), 1, atol=1e-6)


@pytest.mark.parametrize("cmd", ["segment2d", "segment3d"])
def test_segment_and_thresholds(work, tmp_path, cmd, capsys):
    cfg = work / "small.cfg"
    assert run(cmd, "-i", work / "scenes", "-o", tmp_path / "a", "--config", cfg, "--assert-f", 100) == EXIT_OK
    assert "overlap  P 100.00" in capsys.readouterr().out
    assert run(cmd, "-i", work / "scenes", "-o", tmp_path / "b", "--config", cfg,
               "--set", "imp.open_kernel=30", "--assert-f", 50) == EXIT_THRESHOLD


def test_io_and_config_errors(work, tmp_path, capsys):
    cfg = work / "small.cfg"
    assert run("segment2d", "-i", tmp_path / "nowhere", "-o", tmp_path / "o") == EXIT_IO
    assert run("segment3d", "-i", work / "scenes", "-o", tmp_path / "o", "--set", "gms.bogus=1") == EXIT_IO
    assert run("segment3d", "-i", work / "scenes", "-o", tmp_path / "o", "--config", tmp_path / "none.cfg") == EXIT_IO
    assert run("eval", "--pred", tmp_path / "empty", "--gt", work / "scenes") == EXIT_IO
    assert run("viz", "--labels", tmp_path / "missing.pgm", "-o", tmp_path / "x.png") == EXIT_IO
    assert run("augment", "-i", tmp_path / "missing", "-o", tmp_path / "aug", "--config", cfg) == EXIT_IO
    with pytest.raises(SystemExit) as exc:
        main(["segment2d"])
    assert exc.value.code == 2
    assert "error:" in capsys.readouterr().err


def test_eval_against_bundles_and_pgms(work, tmp_path):
    out = tmp_path / "seg"
    assert run("segment2d", "-i", work / "scenes", "-o", out, "--config", work / "small.cfg") == EXIT_OK
    assert run("eval", "--pred", out / "labels", "--gt", work / "scenes", "-o", tmp_path / "ev",
               "--slack", 2, "--assert-f", 100) == EXIT_OK
    rep = json.loads((tmp_path / "ev" / "report.json").read_text())
    assert [i["name"] for i in rep["images"]] == ["scene_00003", "scene_00004", "scene_00005"]
    # ground truth given as PGM files, one prediction damaged
    gt_dir = tmp_path / "gt"
    gt_dir.mkdir()
    pred_dir = tmp_path / "pred"
    pred_dir.mkdir()
    gt = np.zeros((20, 20), np.uint16)
    gt[2:8, 2:8] = 2
    write_pgm(gt_dir / "a.pgm", gt)
    pred = gt.copy()
    pred[2:8, 2:5] = 0
    write_pgm(pred_dir / "a.pgm", pred)
    assert run("eval", "--pred", pred_dir, "--gt", gt_dir, "--assert-f", 60) == EXIT_OK
    assert run("eval", "--pred", pred_dir, "--gt", gt_dir, "--assert-f", 70) == EXIT_THRESHOLD


def test_imp_command(tmp_path):
    lab = np.zeros((20, 20), np.uint16)
    lab[4:14, 4:14] = 2
    lab[1, 18] = 2
    write_pgm(tmp_path / "in.pgm", lab)
    assert run("imp", "-i", tmp_path / "in.pgm", "-o", tmp_path / "out") == EXIT_OK
    out = read_pgm(tmp_path / "out" / "in.pgm")
    assert out[1, 18] == 0 and (out == 2).sum() == 100


def test_augment_command(work, tmp_path):
    assert run("augment", "-i", work / "scenes" / "scene_00003", "-o", tmp_path, "--per-mask", 2,
               "--config", work / "small.cfg") == EXIT_OK
    crops = sorted(tmp_path.glob("*_crop.uotf"))
    assert crops and len(crops) == len(list(tmp_path.glob("*_gt.pgm")))
    c = load_tensor(crops[0])
    assert c.shape == (224, 224, 4)
    assert read_pgm(str(crops[0]).replace("_crop.uotf", "_mask.pgm")).shape == (224, 224)


def test_viz_command(work, tmp_path):
    scene = work / "scenes" / "scene_00004"
    assert run("viz", "--labels", scene, "--scene", scene, "--votes", "--blend", "-o", tmp_path / "v.png") == EXIT_OK
    from PIL import Image
    assert Image.open(tmp_path / "v.png").size == (160, 120)
    assert run("viz", "--labels", scene, "--votes", "-o", tmp_path / "w.png") == EXIT_OK
    write_pgm(tmp_path / "l.pgm", np.zeros((5, 5), np.uint16))
    assert run("viz", "--labels", tmp_path / "l.pgm", "--votes", "-o", tmp_path / "z.png") == EXIT_IO


def test_gradcheck_command(capsys):
    assert run("gradcheck", "--cases", 1, "--size", 5) == EXIT_OK
    out = capsys.readouterr().out
    assert "PASS" in out and "total3d" in out


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "tabletopseg", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.startswith("tabletopseg ")
