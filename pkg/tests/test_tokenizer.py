import numpy as np
import pytest
import torch

from dyadit.errors import ConfigError, IndexOutOfRange, ShapeError
from dyadit.synthetic_data import SynthConfig, generate
from dyadit.tokenizer import MotionTokenizer, ResidualVQ, TokenizerConfig, decode, encode, train_tokenizer

SMALL = dict(channels=[32, 32], codebook_size=16, latent_dim=16)


@pytest.fixture(scope="module")
def tok():
    torch.manual_seed(0)
    return MotionTokenizer(TokenizerConfig(**SMALL)).eval()


@pytest.fixture(scope="module")
def toy_data():
    return generate(SynthConfig(clips=8, clip_length_frames=120, seed=3))


def test_encode_decode_lengths(tok):
    x = np.random.default_rng(0).standard_normal((300, 43, 6)).astype(np.float32)
    z = encode(x, tok)
    assert z.shape == (75, 16)
    assert decode(z, tok).shape == (300, 43, 6)
    assert encode(x[:4], tok).shape == (1, 16)
    assert decode(z[:1], tok).shape == (4, 43, 6)
    np.testing.assert_array_equal(encode(x, tok), z)
    np.testing.assert_array_equal(decode(z, tok), decode(z, tok))


@pytest.mark.parametrize("T", [4, 8, 12, 100, 300])
def test_roundtrip_preserves_length(tok, T):
    x = torch.zeros(2, T, 43, 6)
    assert tok(x)[0].shape == x.shape


def test_encode_rejects_bad_length(tok):
    with pytest.raises(ShapeError):
        tok.encode(torch.zeros(1, 6, 43, 6))


def _vq(books):
    books = torch.as_tensor(books, dtype=torch.float32)
    vq = ResidualVQ(books.shape[0], books.shape[1], books.shape[2])
    vq.codebooks.copy_(books)
    return vq


def test_nearest_entry_two_codes():
    vq = _vq([[[0.0, 0.0], [1.0, 0.0]]])
    idx, q = vq.quantize(torch.tensor([[0.9, 0.0]]))
    assert idx.tolist() == [[1]]
    assert q.tolist() == [[1.0, 0.0]]


def test_exact_match_leaves_no_residual():
    rng = np.random.default_rng(0)
    books = rng.standard_normal((3, 8, 4)).astype(np.float32)
    books[:, 0] = 0
    vq = _vq(books)
    z = torch.from_numpy(books[0, 5:6])
    idx, q = vq.quantize(z)
    assert idx.tolist() == [[5, 0, 0]]
    assert torch.equal(q, z)


def test_dequantize_cases():
    vq = _vq([[[0.0, 0.0], [1.0, 0.0]], [[0.0, 0.0], [0.0, 1.0]]])
    assert vq.dequantize(torch.tensor([[0, 0]])).tolist() == [[0.0, 0.0]]
    assert vq.dequantize(torch.tensor([[1, 1]])).tolist() == [[1.0, 1.0]]
    with pytest.raises(IndexOutOfRange):
        vq.dequantize(torch.tensor([[2, 0]]))
    with pytest.raises(IndexOutOfRange):
        vq.dequantize(torch.tensor([[-1, 0]]))


def test_dequantize_inverts_quantize(tok):
    z = torch.randn(5, 16)
    idx, q = tok.quantizer.quantize(z)
    assert torch.equal(tok.quantizer.dequantize(idx), q)


def test_residual_norms_non_increasing():
    gen = torch.Generator().manual_seed(0)
    vq = ResidualVQ(4, 32, 8)
    vq.ema_update(torch.randn(256, 8, generator=gen), gen)
    z = torch.randn(1000, 8, generator=gen) * 2
    idx, _ = vq.quantize(z)
    residual = z.double()
    norms = [residual.norm(dim=-1)]
    for k in range(4):
        residual = residual - vq.codebooks[k].double()[idx[:, k]]
        norms.append(residual.norm(dim=-1))
    for a, b in zip(norms, norms[1:]):
        assert torch.all(b <= a + 1e-6)


def test_straight_through_gradient_matches_downstream_difference():
    torch.manual_seed(0)
    vq = _vq(torch.tensor([[[0.0, 0.0], [1.0, 0.5], [-0.5, 1.0]]]))
    head = torch.nn.Linear(2, 3).double()
    target = torch.randn(3, dtype=torch.float64)

    def downstream(x):
        return ((torch.tanh(head(x)) - target) ** 2).sum()

    z = torch.tensor([0.8, 0.6], dtype=torch.float64, requires_grad=True)
    _, q = vq.quantize(z.detach().float())
    q = q.double()
    downstream(z + (q - z).detach()).backward()
    eps = 1e-6
    fd = torch.stack([
        (downstream(q + eps * e) - downstream(q - eps * e)) / (2 * eps) for e in torch.eye(2, dtype=torch.float64)
    ])
    assert torch.allclose(z.grad, fd, rtol=1e-3, atol=1e-9)


def test_training_reduces_error_and_uses_codes(toy_data):
    cfg = TokenizerConfig(latent_dim=16, residual_depth=2, codebook_size=32, channels=[64, 64], epochs=60,
                          batch_size=4, dead_after=20, lr=2e-3)
    _, history = train_tokenizer(toy_data, cfg, seed=0)
    assert history[-1]["recon"] < 0.5 * history[0]["recon"]
    assert history[-1]["usage"] >= 0.10
    assert history[-1]["recon"] < history[1]["recon"]


def test_training_is_seeded(toy_data):
    cfg = TokenizerConfig(latent_dim=16, residual_depth=2, codebook_size=32, channels=[32, 32], epochs=2)
    a = train_tokenizer(toy_data, cfg, seed=5)[1]
    b = train_tokenizer(toy_data, cfg, seed=5)[1]
    assert a == b


def test_config_errors():
    with pytest.raises(ConfigError):
        train_tokenizer([], TokenizerConfig())
    with pytest.raises(ConfigError):
        TokenizerConfig(residual_depth=0).validate()
    with pytest.raises(ConfigError):
        TokenizerConfig(codebook_size=1).validate()
