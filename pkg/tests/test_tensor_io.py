import json

import numpy as np
import pytest
import torch

from dyadit.errors import FormatError, IoError
from dyadit.tensor_io import load_state, read_tensor_set, save_checkpoint, write_tensor_set


def test_tensor_set_roundtrip_is_little_endian(tmp_path):
    clips = [{"a": np.arange(6, dtype=np.float32).reshape(2, 3)}, {"a": np.ones((1, 3), np.float32)}]
    write_tensor_set(tmp_path, clips, {"seed": 4})
    raw = (tmp_path / "clip_0_a.f32").read_bytes()
    assert raw == np.arange(6, dtype="<f4").tobytes()
    back, manifest = read_tensor_set(tmp_path)
    np.testing.assert_array_equal(back[0]["a"], clips[0]["a"])
    assert manifest["seed"] == 4 and manifest["clips"][1]["fields"]["a"]["shape"] == [1, 3]


def test_missing_set_is_io_error(tmp_path):
    with pytest.raises(IoError):
        read_tensor_set(tmp_path / "nope")


def test_checkpoint_roundtrip(tmp_path):
    torch.manual_seed(0)
    src = torch.nn.Sequential(torch.nn.Linear(3, 4), torch.nn.LayerNorm(4))
    save_checkpoint(tmp_path, src, {"kind": "toy"})
    meta = json.loads((tmp_path / "meta.json").read_text())
    assert meta["format_version"] == 1 and meta["tensors"]["0.weight"]["shape"] == [4, 3]
    dst = torch.nn.Sequential(torch.nn.Linear(3, 4), torch.nn.LayerNorm(4))
    assert load_state(tmp_path, dst)["kind"] == "toy"
    for a, b in zip(src.state_dict().values(), dst.state_dict().values()):
        assert torch.equal(a, b)
    meta["format_version"] = 2
    (tmp_path / "meta.json").write_text(json.dumps(meta))
    with pytest.raises(FormatError):
        load_state(tmp_path, dst)
