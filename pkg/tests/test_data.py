import numpy as np
import numpy.testing as npt
import pytest

from vitra.data import (
    LabeledDataset,
    decode_ppm,
    load_folder_dataset,
    resize_nearest,
    split,
    synth_dataset,
)
from vitra.errors import DataError, UsageError


def write_ppm(path, pixels):
    """pixels: uint8 array [H, W, 3] -> binary P6 file."""
    pixels = np.asarray(pixels, dtype=np.uint8)
    h, w = pixels.shape[:2]
    path.write_bytes(b"P6\n%d %d\n255\n" % (w, h) + pixels.tobytes())


def make_tree(root, counts, size=4, seed=0):
    rng = np.random.default_rng(seed)
    for name, count in counts.items():
        folder = root / name
        folder.mkdir(parents=True)
        for i in range(count):
            write_ppm(folder / f"img{i:05d}.ppm",
                      rng.integers(0, 256, size=(size, size, 3)))


class TestPpmDecode:
    def test_white_pixel_scales_to_one(self, tmp_path):
        write_ppm(tmp_path / "white.ppm", np.full((1, 1, 3), 255))
        raw = (tmp_path / "white.ppm").read_bytes()
        pixels = decode_ppm(raw)
        npt.assert_array_equal(pixels, np.full((1, 1, 3), 255))

    def test_known_bytes_exact(self):
        # hand-built 2x2 with distinct channel values per pixel
        pixels = np.array(
            [[[255, 0, 0], [0, 255, 0]], [[0, 0, 255], [10, 20, 30]]], dtype=np.uint8
        )
        raw = b"P6\n2 2\n255\n" + pixels.tobytes()
        npt.assert_array_equal(decode_ppm(raw), pixels)

    def test_comments_in_header(self):
        raw = b"P6\n# a comment\n1 1\n# another\n255\n\xff\x00\x7f"
        npt.assert_array_equal(decode_ppm(raw), [[[255, 0, 127]]])

    def test_wrong_magic(self):
        with pytest.raises(DataError):
            decode_ppm(b"P3\n1 1\n255\n")

    def test_truncated_raster(self):
        with pytest.raises(DataError):
            decode_ppm(b"P6\n2 2\n255\n\x00\x00\x00")

    def test_unsupported_maxval(self):
        with pytest.raises(DataError):
            decode_ppm(b"P6\n1 1\n65535\n\x00\x00")


class TestResize:
    def test_identity_when_same_size(self):
        img = np.arange(12).reshape(2, 2, 3)
        npt.assert_array_equal(resize_nearest(img, 2), img)

    def test_upscale_repeats_pixels(self):
        img = np.array([[[0], [1]], [[2], [3]]])
        out = resize_nearest(img, 4)
        npt.assert_array_equal(out[:2, :2, 0], 0)
        npt.assert_array_equal(out[2:, 2:, 0], 3)


class TestFolderLoader:
    def test_counts_and_classes(self, tmp_path):
        make_tree(tmp_path, {"cats": 3, "dogs": 2})
        ds = load_folder_dataset(tmp_path, 4)
        assert len(ds) == 5
        assert ds.class_names == ["cats", "dogs"]
        assert ds.per_class_counts() == [3, 2]

    def test_white_pixel_value(self, tmp_path):
        (tmp_path / "a").mkdir()
        (tmp_path / "b").mkdir()
        write_ppm(tmp_path / "a" / "w.ppm", np.full((1, 1, 3), 255))
        write_ppm(tmp_path / "b" / "k.ppm", np.zeros((1, 1, 3)))
        ds = load_folder_dataset(tmp_path, 1)
        npt.assert_array_equal(ds.samples[0][0], 1.0)
        npt.assert_array_equal(ds.samples[1][0], 0.0)

    def test_hand_built_bytes_to_tensor(self, tmp_path):
        pixels = np.array(
            [[[255, 0, 0], [0, 255, 0]], [[0, 0, 255], [10, 20, 30]]], dtype=np.uint8
        )
        (tmp_path / "a").mkdir()
        (tmp_path / "b").mkdir()
        write_ppm(tmp_path / "a" / "x.ppm", pixels)
        write_ppm(tmp_path / "b" / "y.ppm", pixels)
        ds = load_folder_dataset(tmp_path, 2)
        npt.assert_allclose(ds.samples[0][0], pixels / 255.0, atol=1e-15)

    def test_png_decoding(self, tmp_path):
        from PIL import Image

        rng = np.random.default_rng(0)
        for name in ("a", "b"):
            folder = tmp_path / name
            folder.mkdir()
            pixels = rng.integers(0, 256, size=(4, 4, 3)).astype(np.uint8)
            Image.fromarray(pixels).save(folder / "img.png")
        ds = load_folder_dataset(tmp_path, 4)
        assert len(ds) == 2
        assert ds.samples[0][0].shape == (4, 4, 3)

    def test_undecodable_file_skipped_with_warning(self, tmp_path):
        make_tree(tmp_path, {"a": 2, "b": 1})
        (tmp_path / "a" / "broken.ppm").write_bytes(b"P6\n2 2\n255\nxx")
        with pytest.warns(UserWarning, match="broken.ppm"):
            ds = load_folder_dataset(tmp_path, 4)
        assert len(ds) == 3
        assert ds.skipped == 1

    def test_empty_class_is_hard_error(self, tmp_path):
        make_tree(tmp_path, {"a": 2})
        (tmp_path / "empty").mkdir()
        with pytest.raises(DataError):
            load_folder_dataset(tmp_path, 4)

    def test_single_class_rejected(self, tmp_path):
        make_tree(tmp_path, {"only": 3})
        with pytest.raises(DataError):
            load_folder_dataset(tmp_path, 4)

    def test_deterministic_order(self, tmp_path):
        make_tree(tmp_path, {"a": 3, "b": 3})
        d1 = load_folder_dataset(tmp_path, 4)
        d2 = load_folder_dataset(tmp_path, 4)
        for (img1, l1), (img2, l2) in zip(d1.samples, d2.samples):
            npt.assert_array_equal(img1, img2)
            assert l1 == l2


class TestSplit:
    def _dataset(self, counts):
        samples = [
            (np.zeros((2, 2, 1)) + i, label)
            for label, count in enumerate(counts)
            for i in range(count)
        ]
        return LabeledDataset(samples, [f"c{i}" for i in range(len(counts))])

    def test_3000_per_class_splits_2400_600(self):
        ds = self._dataset([3000] * 4)
        train, test = split(ds, 0.8, seed=0)
        assert train.per_class_counts() == [2400] * 4
        assert test.per_class_counts() == [600] * 4

    def test_floor_rule_on_uneven_classes(self):
        ds = self._dataset([155, 98])
        train, test = split(ds, 0.8, seed=0)
        assert train.per_class_counts() == [124, 78]
        assert test.per_class_counts() == [31, 20]

    def test_two_samples_half(self):
        ds = self._dataset([2, 2])
        train, test = split(ds, 0.5, seed=0)
        assert train.per_class_counts() == [1, 1]
        assert test.per_class_counts() == [1, 1]

    def test_partition_property(self):
        ds = self._dataset([13, 7, 5])
        train, test = split(ds, 0.8, seed=1)
        ids = lambda d: {id(img) for img, _ in d.samples}
        assert ids(train) | ids(test) == ids(ds)
        assert ids(train) & ids(test) == set()

    def test_stratification_fraction(self):
        ds = self._dataset([50, 30, 20])
        train, _ = split(ds, 0.8, seed=2)
        for count, total in zip(train.per_class_counts(), [50, 30, 20]):
            assert abs(count / total - 0.8) <= 1 / 3

    def test_tiny_class_rejected(self):
        ds = self._dataset([5, 1])
        with pytest.raises(DataError):
            split(ds, 0.8, seed=0)

    def test_bad_ratio(self):
        with pytest.raises(UsageError):
            split(self._dataset([4, 4]), 1.5, seed=0)


class TestSynthDataset:
    def test_seed_reproducible(self):
        a = synth_dataset(4, 5, 16, seed=9)
        b = synth_dataset(4, 5, 16, seed=9)
        for (img1, l1), (img2, l2) in zip(a.samples, b.samples):
            npt.assert_array_equal(img1, img2)
            assert l1 == l2

    def test_zero_noise_identical_within_class(self):
        ds = synth_dataset(4, 3, 8, seed=0, noise=0.0)
        by_class = {}
        for img, label in ds.samples:
            by_class.setdefault(label, []).append(img)
        for imgs in by_class.values():
            for img in imgs[1:]:
                npt.assert_array_equal(img, imgs[0])

    def test_values_stay_in_unit_interval(self):
        ds = synth_dataset(4, 10, 16, seed=1, noise=0.1)
        for img, _ in ds.samples:
            assert img.min() >= 0.0 and img.max() <= 1.0

    def test_nearest_centroid_perfect(self):
        # run as a pre-build oracle: the task is separable by construction
        ds = synth_dataset(4, 50, 16, seed=0, noise=0.1)
        flat = np.stack([img.ravel() for img, _ in ds.samples])
        labels = np.array([label for _, label in ds.samples])
        centroids = np.stack([flat[labels == k].mean(axis=0) for k in range(4)])
        dists = ((flat[:, None, :] - centroids[None]) ** 2).sum(axis=2)
        assert (dists.argmin(axis=1) == labels).all()

    def test_single_class_rejected(self):
        with pytest.raises(UsageError):
            synth_dataset(1, 5, 8)
