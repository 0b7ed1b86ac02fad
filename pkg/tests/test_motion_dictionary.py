import numpy as np
import pytest
import torch

from dyadit.errors import ShapeMismatch
from dyadit.motion_dictionary import MotionDictionary, StyleEncoder, init_orthonormal


def test_small_bank_is_orthonormal():
    b = init_orthonormal(8, 512, seed=0)
    np.testing.assert_allclose(b @ b.T, np.eye(8), atol=1e-6)


def test_large_bank_unit_rows_and_block_orthonormal():
    b = init_orthonormal(1000, 512, seed=0)
    np.testing.assert_allclose(np.linalg.norm(b, axis=1), 1.0, atol=1e-6)
    np.testing.assert_allclose(b[:512] @ b[:512].T, np.eye(512), atol=1e-5)
    np.testing.assert_allclose(b[512:] @ b[512:].T, np.eye(488), atol=1e-5)
    np.testing.assert_array_equal(b, init_orthonormal(1000, 512, seed=0))
    assert not np.array_equal(b, init_orthonormal(1000, 512, seed=1))


def test_style_weights_on_simplex():
    torch.manual_seed(0)
    enc, md = StyleEncoder(16, 32), MotionDictionary(50, 32, heads=4)
    ref = torch.randn(3, 20, 16) * 5
    w = enc(ref, md.bases)
    assert torch.all(w >= 0)
    assert torch.allclose(w.sum(-1), torch.ones(3), atol=1e-6)
    assert torch.equal(w, enc(ref.clone(), md.bases))


def _zero_biases(md):
    with torch.no_grad():
        for lin in (md.attn.to_q, md.attn.to_k, md.attn.to_v, md.attn.to_out):
            lin.bias.zero_()


def test_zero_weights_leave_stream_untouched():
    torch.manual_seed(0)
    md = MotionDictionary(10, 16, heads=4)
    _zero_biases(md)
    a = torch.randn(2, 7, 16)
    assert torch.equal(md.modulate(a, torch.zeros(2, 10)), a)
    assert md.modulate(a, None) is a


def test_one_hot_selects_basis_and_aggregation_is_linear():
    torch.manual_seed(0)
    md = MotionDictionary(10, 16, heads=4)
    assert torch.equal(md.aggregate(torch.eye(10)[3:4])[0], md.bases[3].detach())
    m1, m2 = torch.rand(1, 10), torch.rand(1, 10)
    assert torch.allclose(md.aggregate(2 * m1 - 3 * m2), 2 * md.aggregate(m1) - 3 * md.aggregate(m2), atol=1e-6)
    with pytest.raises(ShapeMismatch):
        md.aggregate(torch.zeros(1, 9))


def test_modulate_is_residual_read_of_aggregate():
    torch.manual_seed(0)
    md = MotionDictionary(10, 16, heads=4)
    a, w = torch.randn(1, 5, 16), torch.softmax(torch.randn(1, 10), -1)
    agg = md.aggregate(w)
    assert torch.allclose(md.modulate(a, w) - a, md.attn(a, agg[:, None]), atol=1e-6)


def test_style_encoder_learns_to_pick_its_basis():
    torch.manual_seed(0)
    md = MotionDictionary(2, 8, heads=2)
    enc = StyleEncoder(8, 8, hidden=32)
    bases = md.bases.detach()
    refs = bases[:, None, :].expand(2, 10, 8)
    labels = torch.arange(2)
    opt = torch.optim.Adam(enc.parameters(), lr=1e-2)
    for _ in range(200):
        loss = torch.nn.functional.cross_entropy(enc.logits(refs, bases), labels)
        opt.zero_grad()
        loss.backward()
        opt.step()
    w = enc(refs, bases)
    assert w[0, 0] >= 0.9 and w[1, 1] >= 0.9
