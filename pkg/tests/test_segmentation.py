import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ucc.errors import ContractError, ShapeError
from ucc.model import TrainConfig, build_model, extract_features, train
from ucc.segmentation import (LabeledImage, SegThresholds, anchor_clusters, build_reference,
                              image_bags, label_from_fraction, label_image, paint, patchify,
                              pixel_confusion, pixel_metrics, reassemble, segment)
from ucc.synthetic import TextureSpec, gen_texture_image, gen_texture_images

SPEC = TextureSpec(size=32)
PATCH = 8


@pytest.fixture(scope="module")
def seg_model():
    train_imgs = gen_texture_images(60, SPEC, rng=0)
    val_imgs = gen_texture_images(18, SPEC, rng=1)
    model = build_model(PATCH * PATCH, 6, ucc_hi=2, rng=0)
    cfg = TrainConfig(learning_rate=0.2, batch_size=8, max_iterations=1500, patience=600,
                      validation_period=100)
    best, _ = train(model, image_bags(train_imgs, PATCH), image_bags(val_imgs, PATCH), cfg)
    return best, build_reference(best, train_imgs, PATCH)


@pytest.mark.parametrize("p,label", [(0.10, 1), (0.50, 2), (0.25, None), (0.90, 1),
                                     (0.75, None), (0.20, None), (0.30, None), (0.0, 1)])
def test_label_from_fraction(p, label):
    assert label_from_fraction(p) == label


def test_label_image():
    mask = np.zeros((10, 10))
    mask[:5] = 1
    assert label_image(LabeledImage(np.zeros((10, 10, 1)), mask)) == 2


@settings(max_examples=100, deadline=None)
@given(a=st.floats(0, 1), b=st.floats(0, 1))
def test_labelling_is_monotone(a, b):
    lo, hi = sorted((a, b))
    # once an image is in the mixed band, more positive pixels never make it pure-negative
    if label_from_fraction(lo) == 2 and hi < SegThresholds().ucc1_high:
        assert label_from_fraction(hi) != 1


def test_thresholds_contract():
    with pytest.raises(ContractError):
        SegThresholds(ucc1_low=0.4, ucc2_low=0.3)


def test_patch_counts():
    assert patchify(np.zeros((64, 64, 1)), 32).shape == (4, 1024)
    assert patchify(np.zeros((512, 512, 3)), 32).shape == (256, 3072)


def test_patch_order_is_row_major():
    img = np.arange(16.0).reshape(4, 4)
    p = patchify(img, 2)
    assert p[0].tolist() == [0, 1, 4, 5]
    assert p[1].tolist() == [2, 3, 6, 7]
    assert p[2].tolist() == [8, 9, 12, 13]


@settings(max_examples=40, deadline=None)
@given(gh=st.integers(1, 4), gw=st.integers(1, 4), patch=st.integers(1, 6), c=st.integers(1, 3),
       seed=st.integers(0, 1000))
def test_reassemble_inverts_patchify(gh, gw, patch, c, seed):
    img = np.random.default_rng(seed).uniform(size=(gh * patch, gw * patch, c))
    back = reassemble(patchify(img, patch), gh * patch, gw * patch, c, patch)
    assert np.array_equal(back, img)


def test_non_divisible_images_are_padded(rng):
    img = rng.uniform(size=(10, 7, 1))
    p = patchify(img, 4)
    assert p.shape == (3 * 2, 16)
    assert np.array_equal(reassemble(p, 10, 7, 1, 4), img)
    assert paint(np.arange(6), 10, 7, 4).shape == (10, 7)


def test_labeled_image_validation():
    with pytest.raises(ShapeError):
        LabeledImage(np.zeros((4, 4, 1)), np.zeros((4, 5)))
    with pytest.raises(ContractError):
        LabeledImage(np.zeros((2, 2)), np.full((2, 2), 2))


def test_image_bags_drop_gap_band():
    imgs = [gen_texture_image("mixed", SPEC, np.random.default_rng(0), fraction=f)
            for f in (0.1, 0.25, 0.5, 0.75)]
    imgs[0] = gen_texture_image("normal", SPEC, np.random.default_rng(1))
    labels = [u for _, u in image_bags(imgs, PATCH)]
    assert labels == [1, 2]


def test_metrics_identity_and_complement(rng):
    truth = rng.integers(0, 2, size=(8, 8))
    truth[0, 0], truth[0, 1] = 0, 1
    m = pixel_metrics(truth, truth)
    assert (m.tpr, m.tnr, m.pa, m.fpr, m.fnr) == (1, 1, 1, 0, 0)
    c = pixel_metrics(1 - truth, truth)
    assert (c.pa, c.tpr, c.fpr) == (0, 0, 1)


def test_hand_counted_confusion():
    pred = np.array([[1, 1, 0, 0],
                     [1, 0, 0, 0],
                     [0, 0, 1, 1],
                     [0, 0, 0, 1]])
    truth = np.array([[1, 0, 0, 0],
                      [1, 1, 0, 0],
                      [0, 0, 1, 0],
                      [0, 1, 0, 1]])
    c = pixel_confusion(pred, truth)
    assert (c.tp, c.fp, c.tn, c.fn) == (4, 2, 8, 2)
    m = pixel_metrics(pred, truth)
    assert m.tpr == 4 / 6 and m.tnr == 8 / 10 and m.pa == 12 / 16
    assert abs(m.fpr - 2 / 10) < 1e-15 and abs(m.fnr - 2 / 6) < 1e-15


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 10**6), h=st.integers(1, 12), w=st.integers(1, 12))
def test_rate_identities_and_relabel_invariance(seed, h, w):
    r = np.random.default_rng(seed)
    pred, truth = r.integers(0, 2, size=(h, w)), r.integers(0, 2, size=(h, w))
    m = pixel_metrics(pred, truth)
    assert m.tpr + m.fnr == 1.0 and m.tnr + m.fpr == 1.0
    assert m.confusion.total == h * w
    assert pixel_metrics(1 - pred, 1 - truth).pa == m.pa


def test_single_class_truth_sentinel():
    truth = np.zeros((4, 4))
    m = pixel_metrics(truth, truth)
    assert m.tpr == 1.0 and m.fnr == 0.0
    with pytest.raises(ShapeError):
        pixel_metrics(np.zeros((2, 2)), np.zeros((2, 3)))


def test_segment_half_positive_image(seg_model):
    model, ref = seg_model
    # a full-size image: with only 16 patches the boundary tiles alone would cost 10% PA
    img = gen_texture_image("mixed", TextureSpec(size=128), np.random.default_rng(7), fraction=0.5)
    for per_image in (False, True):
        mask = segment(model, [img], PATCH, ref, per_image=per_image)[0]
        assert pixel_metrics(mask, img.mask).pa >= 0.9


def test_segment_uniform_image_is_constant(seg_model):
    model, ref = seg_model
    img = gen_texture_image("normal", SPEC, np.random.default_rng(8))
    mask = segment(model, [img], PATCH, ref, per_image=True)[0]
    assert np.unique(mask).size == 1


def test_anchoring_ignores_cluster_ids(seg_model, rng):
    model, ref = seg_model
    img = gen_texture_image("mixed", SPEC, rng, fraction=0.5)
    feats = extract_features(model, patchify(img, PATCH))
    ids = (feats[:, 0] > np.median(feats[:, 0])).astype(int)
    assert np.array_equal(anchor_clusters(model, feats, ids, ref),
                          anchor_clusters(model, feats, 1 - ids, ref))


def test_segment_rejects_wrong_patch_dim(seg_model):
    model, ref = seg_model
    with pytest.raises(ShapeError):
        segment(model, [np.zeros((32, 32, 1))], 4, ref)


def test_reference_needs_both_pure_kinds(seg_model):
    model, _ = seg_model
    with pytest.raises(ContractError):
        build_reference(model, gen_texture_images(3, SPEC, rng=0, kinds=("normal",)), PATCH)
