import numpy as np
import pytest

from diffseg.cli import main
from diffseg.io_utils import load_mask_png, read_json, save_image_png, save_mask_png, write_json


def test_no_command_prints_help_and_exits_2(capsys):
    assert main([]) == 2
    assert "usage: diffseg" in capsys.readouterr().out


def test_unknown_command_exits_nonzero():
    with pytest.raises(SystemExit):
        main(["frobnicate"])


def test_phantom_gen(tmp_path, capsys):
    assert main(["phantom", "gen", "--count", "10", "--seed", "7",
                 "--out", str(tmp_path / "d")]) == 0
    assert "wrote 20 slices" in capsys.readouterr().out
    m = read_json(tmp_path / "d" / "manifest.json")
    assert len(m["entries"]) == 20


def _latents_npz(path, rng, n=40):
    y = rng.integers(0, 2, size=n)
    z = rng.standard_normal((n, 8)) + y[:, None] * 2.0  # separable
    np.savez(path, z=z, label=y)


def test_classifier_train_and_eval(tmp_path, capsys):
    rng = np.random.default_rng(0)
    _latents_npz(tmp_path / "lat.npz", rng)
    model = tmp_path / "clf.json"
    assert main(["classifier", "train", "--latents", str(tmp_path / "lat.npz"),
                 "--out", str(model)]) == 0
    assert "validation F1:" in capsys.readouterr().out
    _latents_npz(tmp_path / "lat2.npz", rng)
    assert main(["classifier", "eval", "--model", str(model),
                 "--latents", str(tmp_path / "lat2.npz")]) == 0
    assert "F1 at threshold" in capsys.readouterr().out


def test_maskgen_run(tmp_path, capsys):
    rng = np.random.default_rng(1)
    pair_dir = tmp_path / "pairs"
    lung_dir = tmp_path / "lungs"
    pair_dir.mkdir()
    lung_dir.mkdir()
    pairs = []
    for i in range(3):
        orig = rng.uniform(-0.2, 0.2, size=(64, 64))
        fib = orig.copy()
        fib[20:30, 20:30] += 0.8
        save_image_png(pair_dir / f"s{i}_orig.png", orig)
        save_image_png(pair_dir / f"s{i}_fib.png", np.clip(fib, -1, 1))
        lung = np.zeros((64, 64), dtype=np.uint8)
        lung[8:56, 8:56] = 1
        save_mask_png(lung_dir / f"s{i}.png", lung)
        pairs.append({"id": f"s{i}", "orig": f"s{i}_orig.png", "fib": f"s{i}_fib.png"})
    write_json(pair_dir / "pairs.json", {"pairs": pairs})
    out = tmp_path / "masks"
    assert main(["maskgen", "run", "--pairs", str(pair_dir),
                 "--lungs", str(lung_dir), "--out", str(out)]) == 0
    assert "refined 3 masks" in capsys.readouterr().out
    m = load_mask_png(out / "s0.png")
    assert m[24, 24] == 1 and m[4, 4] == 0
    meta = read_json(out / "s0.json")
    assert meta["component_count"] >= 1


def test_missing_input_exits_1(tmp_path, capsys):
    assert main(["report", "--run", str(tmp_path)]) == 1
    assert "error:" in capsys.readouterr().err


def test_run_rejects_bad_config(tmp_path, capsys):
    write_json(tmp_path / "cfg.json", {"bogus_section": {}})
    assert main(["run", "--config", str(tmp_path / "cfg.json"),
                 "--run-root", str(tmp_path / "runs")]) == 1
    assert "unknown config section" in capsys.readouterr().err
