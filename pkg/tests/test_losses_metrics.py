import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dino_unet.autodiff import Tensor, backward
from dino_unet.losses import ce_loss, dice_loss, one_hot, total_loss
from dino_unet.metrics import (EMPTY, OK, REPORT_COLUMNS, SENTINEL, dice_metric, evaluate_masks, hd95, hd95_with_flag,
                               parse_report)

from oracles import hausdorff_all_pairs, hd95_all_pairs

masks8 = arrays(np.int64, (8, 8), elements=st.integers(0, 2))


def _margin_logits(target, c, m):
    z = np.zeros((target.shape[0], c) + target.shape[1:])
    z += np.moveaxis(np.eye(c)[target], -1, 1) * m
    return Tensor(z)


# ---------------------------------------------------------------- losses


def test_dice_loss_saturates():
    t = np.random.default_rng(0).integers(0, 3, (2, 6, 6))
    assert dice_loss(_margin_logits(t, 3, 20.0), t).item() <= 1e-3


def test_dice_uniform_binary_half_foreground():
    t = np.zeros((1, 4, 4), np.int64)
    t[0, :2] = 1
    eps = 1e-5
    omega, g = 16.0, 8.0
    d_fg = (2 * 0.5 * g + eps) / (0.5 * omega + g + eps)
    d_bg = (2 * 0.5 * (omega - g) + eps) / (0.5 * omega + (omega - g) + eps)
    got = dice_loss(Tensor(np.zeros((1, 2, 4, 4))), t, eps).item()
    assert got == pytest.approx(1 - (d_fg + d_bg) / 2, abs=1e-15)
    assert d_fg == pytest.approx(0.5, rel=1e-5)


def test_ce_uniform_is_log_c():
    for c in (2, 4, 7):
        t = np.random.default_rng(c).integers(0, c, (2, 5, 5))
        assert abs(ce_loss(Tensor(np.zeros((2, c, 5, 5))), t).item() - math.log(c)) <= 1e-9


def test_ce_margin_closed_form():
    c, m = 4, 3.0
    t = np.random.default_rng(1).integers(0, c, (1, 4, 4))
    got = ce_loss(_margin_logits(t, c, m), t).item()
    assert got == pytest.approx(math.log(1 + (c - 1) * math.exp(-m)), rel=1e-12)


def test_total_is_exact_sum_and_nonnegative():
    rng = np.random.default_rng(2)
    for _ in range(5):
        z, t = Tensor(rng.standard_normal((2, 3, 4, 4)) * 4), rng.integers(0, 3, (2, 4, 4))
        tot, d, ce = total_loss(z, t)
        assert tot.item() == d.item() + ce.item()
        assert tot.item() >= -1e-9


def test_label_range_checked():
    with pytest.raises(ValueError, match="labels"):
        ce_loss(Tensor(np.zeros((1, 3, 2, 2))), np.full((1, 2, 2), 3))
    with pytest.raises(ValueError, match="labels"):
        dice_loss(Tensor(np.zeros((1, 3, 2, 2))), np.full((1, 2, 2), -1))


def test_dice_loss_decreases_along_negative_gradient():
    rng = np.random.default_rng(3)
    t = rng.integers(0, 3, (1, 5, 5))
    z = Tensor(rng.standard_normal((1, 3, 5, 5)), requires_grad=True)
    before = dice_loss(z, t)
    backward(before)
    after = dice_loss(Tensor(z.data - 1e-2 * z.grad), t)
    assert after.item() < before.item()


def test_one_hot_layout():
    oh = one_hot(np.array([[[0, 2]]]), 3)
    assert oh.shape == (1, 3, 1, 2)
    np.testing.assert_array_equal(oh[0, :, 0, 1], [0, 0, 1])


# ---------------------------------------------------------------- dice metric


def test_dice_identity_and_half_overlap():
    a = np.zeros((6, 6), int)
    a[1:3, 1:3] = 1
    assert dice_metric(a, a, 1) == 1.0
    b = np.zeros((6, 6), int)
    b[1:3, 2:4] = 1
    assert dice_metric(a, b, 1) == 0.5
    assert dice_metric(np.zeros((3, 3), int), np.zeros((3, 3), int), 1) == 1.0


@settings(max_examples=80, deadline=None)
@given(masks8, masks8, st.integers(0, 2))
def test_dice_matches_set_counting_and_is_symmetric(a, b, c):
    sa = {(i, j) for i in range(8) for j in range(8) if a[i, j] == c}
    sb = {(i, j) for i in range(8) for j in range(8) if b[i, j] == c}
    ref = 1.0 if not sa and not sb else 2 * len(sa & sb) / (len(sa) + len(sb))
    d = dice_metric(a, b, c)
    assert d == ref == dice_metric(b, a, c)
    assert 0.0 <= d <= 1.0


# ---------------------------------------------------------------- hd95


def test_hd95_identity_zero():
    a = np.zeros((10, 10), int)
    a[2:6, 3:8] = 1
    assert hd95(a, a, 1) == 0.0


def test_hd95_two_points():
    a, b = np.zeros((12, 12), int), np.zeros((12, 12), int)
    a[2, 3] = 1
    b[5, 7] = 1
    assert hd95(a, b, 1) == 5.0


def test_hd95_empty_conventions():
    a, z = np.zeros((6, 8), int), np.zeros((6, 8), int)
    a[1, 1] = 1
    assert hd95_with_flag(z, z, 1) == (0.0, EMPTY)
    assert hd95_with_flag(a, z, 1) == (10.0, SENTINEL)
    assert hd95_with_flag(z, a, 1) == (10.0, SENTINEL)
    assert hd95_with_flag(a, a, 1)[1] == OK


@settings(max_examples=60, deadline=None)
@given(masks8, masks8)
def test_hd95_oracle_symmetry_and_bound(a, b):
    h = hd95(a, b, 1)
    assert h == hd95_all_pairs(a, b, 1)
    assert h == hd95(b, a, 1)
    if (a == 1).any() and (b == 1).any():
        assert h <= hausdorff_all_pairs(a, b, 1)


def test_hd95_matches_oracle_random_16():
    rng = np.random.default_rng(4)
    for _ in range(20):
        a = (rng.random((16, 16)) < rng.uniform(0.05, 0.5)).astype(int)
        b = (rng.random((16, 16)) < rng.uniform(0.05, 0.5)).astype(int)
        assert hd95(a, b, 1) == hd95_all_pairs(a, b, 1)


# ---------------------------------------------------------------- report


def test_report_schema_and_means():
    t = np.zeros((2, 8, 8), int)
    t[0, 1:4, 1:4] = 1
    t[1, 4:7, 4:7] = 2
    rep = evaluate_masks(t, t, 3, ["a", "b"])
    rows = parse_report(rep.to_tsv())
    assert tuple(rows[0]) == REPORT_COLUMNS
    assert rep.mean_dice == 1.0 and rep.mean_hd95 == 0.0
    # class 2 is absent in sample a on both sides: excluded from the means
    assert [r.hd95_flag for r in rep.rows if r.sample_id == "a"] == [OK, OK, EMPTY]
    assert rep.per_class_dice == [1.0, 1.0]
    means = [r for r in rows if r["sample_id"] == "mean"]
    assert means[-1]["class"] == "all"


def test_report_header_comment_states_exclusions():
    text = evaluate_masks([np.zeros((4, 4), int)], [np.zeros((4, 4), int)], 2).to_tsv()
    assert text.startswith("#") and "background" in text.splitlines()[0]
