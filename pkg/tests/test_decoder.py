import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dino_unet import ops
from dino_unet.autodiff import Tensor
from dino_unet.config import DecoderConfig
from dino_unet.decoder import decoder_forward, decoder_param_count, init_decoder, predict_mask


def _skips(b=1, dims=(16, 32, 64, 128), base=16, seed=0):
    rng = np.random.default_rng(seed)
    return [Tensor(rng.standard_normal((b, d, base >> i, base >> i))) for i, d in enumerate(dims)]


def test_logits_full_resolution():
    cfg = DecoderConfig()
    out = decoder_forward(_skips(2), init_decoder(cfg, 0), cfg)
    assert out.shape == (2, 4, 64, 64)


def test_non_square_input():
    cfg = DecoderConfig()
    rng = np.random.default_rng(1)
    skips = [Tensor(rng.standard_normal((1, d, 8 >> i, 24 >> i))) for i, d in enumerate(cfg.skip_dims)]
    assert decoder_forward(skips, init_decoder(cfg, 0), cfg).shape == (1, 4, 32, 96)


def test_zero_weights_uniform_posterior():
    cfg = DecoderConfig()
    params = init_decoder(cfg, 0)
    for _, t in params.items():
        t.data[:] = 0
    out = decoder_forward(_skips(), params, cfg)
    assert not out.data.any()
    np.testing.assert_allclose(ops.softmax(out, axis=1).data, 0.25, rtol=1e-15)


def test_param_count_and_flags():
    cfg = DecoderConfig()
    params = init_decoder(cfg, 0)
    assert sum(t.size for _, t in params.items()) == decoder_param_count(cfg)
    assert all(t.requires_grad and n.startswith("decoder.") for n, t in params.items())


def test_inconsistent_skips_rejected():
    cfg = DecoderConfig()
    skips = _skips()
    skips[2] = Tensor(np.zeros((1, 64, 3, 3)))
    with pytest.raises(ValueError, match="skip 2"):
        decoder_forward(skips, init_decoder(cfg, 0), cfg)
    with pytest.raises(ValueError, match="channels"):
        decoder_forward(_skips(dims=(16, 32, 64, 64)), init_decoder(cfg, 0), cfg)


def test_predict_mask_strict_max_and_ties():
    logits = np.zeros((1, 3, 2, 2))
    logits[:, 2] = 1.0
    assert (predict_mask(logits) == 2).all()
    tie = np.zeros((1, 3, 1, 1))
    tie[0, 1] = tie[0, 2] = 5.0
    assert predict_mask(tie)[0, 0, 0] == 1


def test_predict_mask_matches_scalar_argmax():
    z = np.random.default_rng(2).standard_normal((2, 4, 3, 3))
    m = predict_mask(z)
    for b in range(2):
        for i in range(3):
            for j in range(3):
                col = list(z[b, :, i, j])
                assert m[b, i, j] == col.index(max(col))


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (1, 3, 4, 4), elements=st.floats(-10, 10)),
       arrays(np.float64, (1, 1, 4, 4), elements=st.floats(-100, 100)))
def test_predict_mask_shift_invariant(z, c):
    # snap to a coarse grid so the shift is exact in floating point
    z = np.round(z * 4) / 4
    c = np.round(c)
    np.testing.assert_array_equal(predict_mask(z), predict_mask(z + c))
