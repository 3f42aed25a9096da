import numpy as np
import pytest
from hypothesis import given, strategies as st

from stmask.geometry import FrameMaskSet, LatentGrid
from stmask.maskgen import (
    AblationFlags,
    AttentionMaskBundle,
    TokenLabels,
    build_bundle,
    build_cross_mask,
    build_spatial_mask,
    build_temporal_mask,
    token_labels_from_prompt,
    tokenize,
)


def xnor_oracle(a, b):
    """Entrywise double-loop XNOR reference."""
    out = np.zeros((len(a), len(b)), dtype=np.uint8)
    for i, ai in enumerate(a):
        for j, bj in enumerate(b):
            out[i, j] = ai * bj + (1 - ai) * (1 - bj)
    return out


binary_vec = st.lists(st.integers(0, 1), min_size=1, max_size=16).map(np.array)


class TestCrossMask:
    def test_small_example(self):
        mask = build_cross_mask([1, 0], TokenLabels([1, 0, 0]))
        assert mask.tolist() == [[1, 0, 0], [0, 1, 1]]

    def test_all_foreground_gives_all_ones(self):
        mask = build_cross_mask([1, 1, 1], TokenLabels([1, 1]))
        assert mask.all()

    def test_complementing_both_sides_leaves_mask_unchanged(self, rng):
        for _ in range(200):
            fg = rng.integers(0, 2, size=rng.integers(1, 20))
            tok = rng.integers(0, 2, size=rng.integers(1, 12))
            m1 = build_cross_mask(fg, TokenLabels(tok))
            m2 = build_cross_mask(1 - fg, TokenLabels(1 - tok))
            assert np.array_equal(m1, m2)
            assert np.array_equal(m1, xnor_oracle(fg, tok))


class TestSpatialMask:
    def test_two_cliques(self):
        mask = build_spatial_mask([1, 0, 1, 0])
        for i in (0, 2):
            for j in (0, 2):
                assert mask[i, j] == 1
        for i in (1, 3):
            for j in (1, 3):
                assert mask[i, j] == 1
        assert mask[0, 1] == 0 and mask[2, 3] == 0

    def test_all_background_is_single_clique(self):
        assert build_spatial_mask([0, 0, 0]).all()

    @given(binary_vec)
    def test_outer_product_identity(self, fg):
        mask = build_spatial_mask(fg)
        expect = np.outer(fg, fg) + np.outer(1 - fg, 1 - fg)
        assert np.array_equal(mask, expect)

    @given(binary_vec)
    def test_symmetric_with_unit_diagonal(self, fg):
        mask = build_spatial_mask(fg)
        assert np.array_equal(mask, mask.T)
        assert np.diag(mask).all()
        assert mask.any(axis=1).all()  # no fully masked row can exist


class TestTemporalMask:
    def test_small_example(self):
        mask = build_temporal_mask([1, 1, 0])
        assert mask.tolist() == [[1, 1, 0], [1, 1, 0], [0, 0, 1]]

    def test_constant_series_is_all_ones(self):
        assert build_temporal_mask([1, 1, 1, 1]).all()
        assert build_temporal_mask([0, 0]).all()

    def test_same_kernel_as_spatial(self, rng):
        for _ in range(100):
            fg = rng.integers(0, 2, size=rng.integers(1, 24))
            assert np.array_equal(build_temporal_mask(fg), build_spatial_mask(fg))


def mask_set_from(frames):
    frames = np.asarray(frames, dtype=np.uint8)
    lat = frames.shape[1]
    # tests use synthetic 1-row grids; shape is what matters here
    return FrameMaskSet(grid=LatentGrid(lat, 1), frames=frames)


class TestBundle:
    def test_three_frame_2x2_fixture(self):
        # 2x2 grid over 3 frames with a temporally changing foreground
        frames = [[1, 1, 0, 0], [0, 1, 0, 1], [0, 0, 0, 0]]
        masks = FrameMaskSet(grid=LatentGrid(2, 2), frames=np.array(frames))
        bundle = build_bundle(masks, TokenLabels([0, 1, 0]))
        assert bundle.cross.shape == (3, 4, 3)
        assert bundle.spatial.shape == (3, 4, 4)
        assert bundle.temporal.shape == (4, 3, 3)
        for f, fg in enumerate(frames):
            assert np.array_equal(bundle.spatial[f], xnor_oracle(fg, fg))
            assert np.array_equal(bundle.cross[f], xnor_oracle(fg, [0, 1, 0]))
        for i in range(4):
            series = [frames[f][i] for f in range(3)]
            assert np.array_equal(bundle.temporal[i], xnor_oracle(series, series))

    def test_all_ablations_off_gives_all_ones(self):
        masks = mask_set_from([[1, 0, 1], [0, 0, 1]])
        bundle = build_bundle(masks, TokenLabels([1, 0]), AblationFlags(False, False, False))
        assert bundle.cross.all() and bundle.spatial.all() and bundle.temporal.all()
        assert bundle.fully_masked_cross_rows == 0

    def test_bg_cross_row_complements_fg_row(self, rng):
        for _ in range(50):
            fg = rng.integers(0, 2, size=8)
            tok = rng.integers(0, 2, size=5)
            if fg.min() == fg.max():
                continue
            masks = mask_set_from([fg])
            bundle = build_bundle(masks, TokenLabels(tok))
            i_fg = int(np.argmax(fg == 1))
            i_bg = int(np.argmax(fg == 0))
            assert np.array_equal(
                bundle.cross[0, i_fg], 1 - bundle.cross[0, i_bg]
            )

    def test_reports_fully_masked_cross_rows(self):
        # all tokens foreground: every background pixel's row is fully masked
        masks = mask_set_from([[1, 0, 0, 1]])
        bundle = build_bundle(masks, TokenLabels([1, 1]))
        assert bundle.fully_masked_cross_rows == 2
        ok = build_bundle(masks, TokenLabels([1, 0]))
        assert ok.fully_masked_cross_rows == 0

    def test_disabled_family_keeps_shapes(self):
        masks = mask_set_from([[1, 0], [0, 1]])
        bundle = build_bundle(masks, TokenLabels([1, 0, 0]), AblationFlags(True, False, True))
        assert bundle.spatial.all()
        assert not bundle.cross.all()
        assert bundle.spatial.shape == (2, 2, 2)

    @given(st.data())
    def test_complement_invariance_everywhere(self, data):
        n_frames = data.draw(st.integers(1, 4))
        lat = data.draw(st.integers(1, 6))
        frames = np.array(
            data.draw(
                st.lists(
                    st.lists(st.integers(0, 1), min_size=lat, max_size=lat),
                    min_size=n_frames,
                    max_size=n_frames,
                )
            )
        )
        tok = np.array(data.draw(st.lists(st.integers(0, 1), min_size=1, max_size=5)))
        b1 = build_bundle(mask_set_from(frames), TokenLabels(tok))
        b2 = build_bundle(mask_set_from(1 - frames), TokenLabels(1 - tok))
        assert np.array_equal(b1.cross, b2.cross)
        assert np.array_equal(b1.spatial, b2.spatial)
        assert np.array_equal(b1.temporal, b2.temporal)

    def test_bundle_shape_validation(self):
        with pytest.raises(ValueError):
            AttentionMaskBundle(
                cross=np.ones((2, 3, 4), np.uint8),
                spatial=np.ones((2, 3, 3), np.uint8),
                temporal=np.ones((2, 2, 2), np.uint8),  # should be (3, 2, 2)
            )


class TestTokenLabels:
    def test_tokenizer_strips_punctuation(self):
        assert tokenize("A woodpecker climbing up a tree trunk.") == (
            "a", "woodpecker", "climbing", "up", "a", "tree", "trunk",
        )

    def test_phrase_match(self):
        labels = token_labels_from_prompt(
            "A red double-decker bus moving through London streets.",
            "double-decker bus",
        )
        assert labels.labels.tolist() == [0, 0, 1, 1, 1, 0, 0, 0, 0]

    def test_every_occurrence_is_marked(self):
        labels = token_labels_from_prompt("a cat and a cat", "cat")
        assert labels.labels.tolist() == [0, 1, 0, 0, 1]

    def test_missing_phrase_rejected(self):
        with pytest.raises(ValueError):
            token_labels_from_prompt("a dog running", "cat")

    def test_label_validation(self):
        with pytest.raises(ValueError):
            TokenLabels(np.array([0, 2]))
        with pytest.raises(ValueError):
            TokenLabels(np.array([]))
