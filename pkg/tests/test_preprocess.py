import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from polcvnn.polsar_io import CoherencyImage, LabelMap
from polcvnn.preprocess import (SplitSpec, build_dataset, extract_patch, extract_patches,
                                normalize_channels, reflect_index, stack_patches,
                                stratified_split, train_size)

from conftest import random_complex


def _ramp_image(h, w):
    r, c = np.mgrid[0:h, 0:w]
    v = (10 * r + c).astype(float)
    return CoherencyImage(np.repeat(v[..., None], 6, axis=2) * (1 + 0j))


class TestNormalize:
    def test_constant_plane_zeroed(self, rng):
        data = random_complex(rng, (4, 4, 6))
        data[..., 0] = 5
        out = normalize_channels(CoherencyImage(data))
        assert not np.any(out.data[..., 0])

    def test_two_values(self):
        data = np.zeros((1, 2, 6), complex)
        data[0, :, 0] = [1, 3]
        out = normalize_channels(CoherencyImage(data))
        np.testing.assert_allclose(out.data[0, :, 0].real, [-1, 1], atol=1e-15)

    def test_moments_and_input_untouched(self, rng):
        img = CoherencyImage(random_complex(rng, (7, 9, 6), 3.0) + 2 - 1j)
        before = img.data.copy()
        out = normalize_channels(img)
        assert np.array_equal(img.data, before)
        for plane in (out.data.real, out.data.imag):
            np.testing.assert_allclose(plane.mean(axis=(0, 1)), 0, atol=1e-9)
            np.testing.assert_allclose(plane.std(axis=(0, 1)), 1, atol=1e-9)

    def test_idempotent(self, rng):
        once = normalize_channels(CoherencyImage(random_complex(rng, (6, 5, 6), 4.0)))
        np.testing.assert_allclose(normalize_channels(once).data, once.data, atol=1e-9)


class TestReflect:
    def test_mirror_rule(self):
        np.testing.assert_array_equal(reflect_index(np.arange(-3, 7), 4),
                                      [3, 2, 1, 0, 1, 2, 3, 2, 1, 0])

    def test_length_one(self):
        assert np.all(reflect_index(np.arange(-5, 6), 1) == 0)


class TestExtract:
    def test_interior_copy(self):
        img = _ramp_image(6, 6)
        p = extract_patch(img, 2, 3, 3)
        np.testing.assert_array_equal(p.data, img.data[1:4, 2:5])
        assert (p.center_row, p.center_col) == (2, 3)

    def test_corner_mirror(self):
        p = extract_patch(_ramp_image(4, 4), 0, 0, 3)
        np.testing.assert_array_equal(p.data[0, :, 0].real, [11, 10, 11])

    def test_big_window_on_small_image(self):
        img = _ramp_image(5, 5)
        for r in range(5):
            for c in range(5):
                assert extract_patch(img, r, c, 13).data.shape == (13, 13, 6)

    def test_center_out_of_bounds(self):
        with pytest.raises(ValueError, match="center out of bounds"):
            extract_patch(_ramp_image(4, 4), 4, 0, 3)

    @pytest.mark.parametrize("window", [2, 1, 4])
    def test_bad_window(self, window):
        with pytest.raises(ValueError):
            extract_patch(_ramp_image(4, 4), 0, 0, window)

    @settings(max_examples=30, deadline=None)
    @given(h=st.integers(2, 8), w=st.integers(2, 8), half=st.integers(1, 6))
    def test_equals_materialised_padding(self, h, w, half):
        """Every patch equals a slice of the explicitly mirror-extended array."""
        window = 2 * half + 1
        img = CoherencyImage(random_complex(np.random.default_rng(h * 100 + w), (h, w, 6)))
        pad = np.pad(img.data, ((half, half), (half, half), (0, 0)), mode="reflect")
        for r in range(h):
            for c in range(w):
                np.testing.assert_array_equal(extract_patch(img, r, c, window).data,
                                              pad[r:r + window, c:c + window])


class TestSplit:
    def test_train_size_rule(self):
        assert train_size(0.01, 29249) == 292
        assert train_size(0.01, 578) == 6
        assert train_size(0.5, 2) == 1
        assert train_size(0.01, 3) == 1

    def test_two_pixel_class(self):
        split = stratified_split(LabelMap(np.array([[1, 1, 2, 2, 2]]), 2), 0.5, 0)
        assert split.train_counts() == {1: 1, 2: 2}

    def test_partition_and_determinism(self, rng):
        labels = rng.integers(0, 4, size=(30, 20))
        m = LabelMap(labels, 3)
        a = stratified_split(m, 0.1, 11)
        b = stratified_split(m, 0.1, 11)
        c = stratified_split(m, 0.1, 12)
        for cls in (1, 2, 3):
            assert np.array_equal(a.train[cls], b.train[cls])
            tr = {tuple(p) for p in a.train[cls]}
            te = {tuple(p) for p in a.test[cls]}
            assert not tr & te
            assert tr | te == {tuple(p) for p in np.argwhere(labels == cls)}
            assert len(tr) == max(1, int(np.floor(0.1 * (labels == cls).sum() + 0.5)))
        assert any(not np.array_equal(a.train[k], c.train[k]) for k in (1, 2, 3))

    def test_empty_class(self):
        with pytest.raises(ValueError, match="empty class"):
            stratified_split(LabelMap(np.array([[1, 1, 3]]), 3), 0.5, 0)

    @pytest.mark.parametrize("ratio", [0.0, 1.0, -0.1])
    def test_ratio_range(self, ratio):
        with pytest.raises(ValueError):
            stratified_split(LabelMap(np.array([[1, 2]]), 2), ratio, 0)


class TestBuildDataset:
    def test_three_labeled_pixels(self):
        img = _ramp_image(4, 4)
        labels = np.zeros((4, 4), int)
        labels[0, 1], labels[2, 2], labels[3, 0] = 2, 1, 2
        m = LabelMap(labels, 2)
        split = SplitSpec(0.5, 0, {1: np.array([[2, 2]]), 2: np.array([[3, 0]])},
                          {1: np.zeros((0, 2), int), 2: np.array([[0, 1]])})
        train, test = build_dataset(img, m, split, 3)
        assert len(train) + len(test) == 3
        assert [p.label for p in train] == [1, 2] and [p.label for p in test] == [2]
        np.testing.assert_array_equal(test[0].data, extract_patch(img, 0, 1, 3).data)

    def test_order_and_cross_check(self, small_scene):
        image, m = small_scene
        image = normalize_channels(image)
        split = stratified_split(m, 0.05, 2)
        train, test = build_dataset(image, m, split, 5)
        assert len(train) + len(test) == int((m.labels > 0).sum())
        keys = [(p.label, p.center_row, p.center_col) for p in test]
        assert keys == sorted(keys)
        for p in train[::7]:
            direct = extract_patch(image, p.center_row, p.center_col, 5)
            assert np.array_equal(p.data, direct.data)
            assert p.label == m.labels[p.center_row, p.center_col]
        data, labels = stack_patches(train)
        assert data.shape == (len(train), 5, 5, 6) and labels.dtype.kind == "i"

    def test_batch_extract_matches_single(self, small_scene):
        image, _ = small_scene
        rows, cols = np.array([0, 5, 23]), np.array([23, 0, 11])
        batch = extract_patches(image, rows, cols, 7)
        for k in range(3):
            assert np.array_equal(batch[k], extract_patch(image, rows[k], cols[k], 7).data)
