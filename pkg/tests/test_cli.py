import json

import numpy as np
import pytest

from dyadit import __version__
from dyadit.cli import main
from dyadit.pipeline import build, resolve_config, toy_config_path
from dyadit.errors import ConfigError

TINY = [
    "--override", "synthetic.clips=4", "--override", "synthetic.clip_length_frames=32",
]
TINY_TRAIN = [
    "--override", "tokenizer.channels=[16,16]", "--override", "tokenizer.codebook_size=16",
    "--override", "tokenizer.epochs=2", "--override", "model.hidden=16", "--override", "model.head_width=4",
    "--override", "model.ffn_width=32", "--override", "model.time_embed_dim=16",
    "--override", "model.dictionary_size=8", "--override", "model.style_hidden=16",
    "--override", "train.steps=3", "--override", "train.batch_size=2",
]


def test_version(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["generate", "--version"])
    assert exc.value.code == 0
    assert __version__ in capsys.readouterr().out


def test_overrides_and_unknown_keys():
    doc = resolve_config(toy_config_path(), ["clips=8"], default_section="synthetic")
    assert build(doc)["synthetic"].clips == 8
    with pytest.raises(ConfigError, match="bogus"):
        resolve_config(None, ["bogus=1"], default_section="synthetic")
    with pytest.raises(ConfigError, match="model.nope"):
        resolve_config(None, ["model.nope=1"])


def test_make_synthetic_exit_codes(tmp_path, capsys):
    assert main(["make-synthetic", "--out", str(tmp_path / "d"), "--override", "clips=3",
                 "--override", "clip_length_frames=8"]) == 0
    manifest = json.loads((tmp_path / "d" / "manifest.json").read_text())
    assert len(manifest["clips"]) == 3
    echoed = json.loads(capsys.readouterr().err.splitlines()[0])
    assert echoed["config"]["synthetic"]["clips"] == 3
    assert main(["make-synthetic", "--out", str(tmp_path / "e"), "--override", "colour=red"]) == 2
    assert "colour" in capsys.readouterr().err


def test_missing_inputs_exit_3(tmp_path):
    assert main(["make-synthetic", "--out", str(tmp_path / "d")] + TINY) == 0
    assert main(["train-dit", "--data", str(tmp_path / "d"), "--tokenizer", str(tmp_path / "none"),
                 "--out", str(tmp_path / "m")]) == 3
    assert main(["train-tokenizer", "--data", str(tmp_path / "missing"), "--out", str(tmp_path / "t")]) == 3
    assert main(["evaluate", "--generated", str(tmp_path / "x"), "--reference", str(tmp_path / "d")]) == 3


def test_divergence_exit_4(tmp_path, capsys):
    assert main(["make-synthetic", "--out", str(tmp_path / "d")] + TINY) == 0
    code = main(["train-tokenizer", "--data", str(tmp_path / "d"), "--out", str(tmp_path / "t"),
                 "--override", "lr=1e30", "--override", "channels=[8,8]", "--override", "epochs=3"])
    assert code == 4
    assert "step" in capsys.readouterr().err


def test_tiny_pipeline(tmp_path, capsys):
    d, t, m = str(tmp_path / "d"), str(tmp_path / "t"), str(tmp_path / "m")
    assert main(["make-synthetic", "--out", d] + TINY) == 0
    assert main(["train-tokenizer", "--data", d, "--out", t] + TINY_TRAIN) == 0
    assert (tmp_path / "t" / "losses.jsonl").read_text().count("\n") == 3
    assert main(["train-dit", "--data", d, "--tokenizer", t, "--out", m] + TINY_TRAIN) == 0
    lines = (tmp_path / "m" / "losses.jsonl").read_text().splitlines()
    assert json.loads(lines[-1])["step"] == 3
    gen_args = ["generate", "--data", d, "--tokenizer", t, "--model", m, "--steps", "3", "--relationship", "2"]
    assert main(gen_args + ["--out", str(tmp_path / "g1")]) == 0
    assert main(gen_args + ["--out", str(tmp_path / "g2")]) == 0
    manifest = json.loads((tmp_path / "g1" / "generation.json").read_text())
    assert manifest["relationship"] == [2, 2, 2, 2] and manifest["sampler"]["cfg_scale"] == 2.0
    for f in (tmp_path / "g1").glob("*.f32"):
        assert f.read_bytes() == (tmp_path / "g2" / f.name).read_bytes()
    assert main(gen_args[:-2] + ["--relationship", "7", "--out", str(tmp_path / "g3")]) == 2
    assert main(gen_args[:-2] + ["--personality", "1,2", "--out", str(tmp_path / "g3")]) == 2
    assert main(["generate", "--data", d, "--tokenizer", t, "--model", str(tmp_path / "none"),
                 "--out", str(tmp_path / "g4")]) == 3
    capsys.readouterr()
    assert main(["evaluate", "--generated", str(tmp_path / "g1"), "--reference", d, "--out", str(tmp_path / "r")]) == 0
    report = json.loads(capsys.readouterr().out)
    for key in ("fd_static", "fd_kinetic", "diversity_static", "diversity_kinetic", "beat_consistency"):
        assert np.isfinite(report[key])
    assert (tmp_path / "r" / "pose_statistics.png").exists()
    capsys.readouterr()
    assert main(["evaluate", "--generated", d, "--reference", d, "--no-figures"]) == 0
    assert json.loads(capsys.readouterr().out)["fd_static"] <= 1e-6
