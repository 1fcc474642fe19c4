import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import pattern_arrays, touch_tree
from xraydl.data import (
    AugmentConfig, ImageLoader, PreprocessConfig, augment, hflip, load_and_preprocess, make_batches,
    resolve_splits, scan_dataset, split_dataset,
)
from xraydl.errors import DecodeError, FormatError, IngestionError, ParameterError
from xraydl.imageio import read_pnm, write_pnm
from xraydl.rng import Rng


# -- scanning ---------------------------------------------------------------

def test_scan_small_tree(tmp_path):
    touch_tree(tmp_path, {"train": {"Pneumonia": 2, "Normal": 3}})
    m = scan_dataset(tmp_path)
    assert m.class_names == ["Normal", "Pneumonia"]
    assert m.counts("train") == [3, 2]
    assert [p for p, _ in m.splits["train"]] == sorted(p for p, _ in m.splits["train"])
    assert scan_dataset(tmp_path) == m


def test_scan_full_scale_stub_tree(tmp_path):
    touch_tree(tmp_path, {"train": {"Normal": 1340, "Pneumonia": 3874}})
    m = scan_dataset(tmp_path)
    assert m.counts("train") == [1340, 3874]
    assert len(m.splits["train"]) == 5214


def test_scan_errors(tmp_path):
    with pytest.raises(IngestionError):
        scan_dataset(tmp_path)
    with pytest.raises(IngestionError):
        scan_dataset(tmp_path / "missing")
    touch_tree(tmp_path, {"train": {"A": 1, "B": 1}, "test": {"A": 1}})
    with pytest.raises(IngestionError, match="B"):
        scan_dataset(tmp_path)


def test_scan_ignores_unsupported_files(tmp_path):
    touch_tree(tmp_path, {"train": {"A": 2}})
    (tmp_path / "train" / "A" / "notes.txt").write_text("x")
    assert scan_dataset(tmp_path).counts("train") == [2]


# -- splitting --------------------------------------------------------------

def test_split_sizes():
    assert [len(s) for s in split_dataset(range(10), (0.7, 0.2, 0.1), 0)] == [7, 2, 1]
    assert [len(s) for s in split_dataset(range(46), (0.8, 0.2, 0.0), 0)] == [37, 9, 0]
    tr, va, te = split_dataset(list("abcde"), (1, 0, 0), 3)
    assert sorted(tr) == list("abcde") and va == [] and te == []
    with pytest.raises(ParameterError):
        split_dataset(range(4), (0.5, 0.6, 0.0), 0)
    with pytest.raises(ParameterError):
        split_dataset(range(4), (1.2, -0.2, 0.0), 0)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 200), st.integers(0, 10), st.integers(0, 10), st.integers(0, 10), st.integers(0, 2**32))
def test_split_partitions_input(n, a, b, c, seed):
    if a + b + c == 0:
        a = 1
    total = a + b + c
    ratios = (a / total, b / total, c / total)
    parts = split_dataset(list(range(n)), ratios, seed)
    assert sorted(parts[0] + parts[1] + parts[2]) == list(range(n))
    assert parts == split_dataset(list(range(n)), ratios, seed)


def test_resolve_splits_prefers_directories(tmp_path):
    touch_tree(tmp_path, {"train": {"A": 5, "B": 5}, "valid": {"A": 1, "B": 1}, "test": {"A": 2, "B": 2}})
    m = scan_dataset(tmp_path)
    s = resolve_splits(m, (0.8, 0.2, 0.0), 1)
    assert len(s["train"]) == 8 and len(s["valid"]) == 2 and s["test"] == m.splits["test"]
    s = resolve_splits(m, (1.0, 0.0, 0.0), 1)
    assert len(s["train"]) == 10 and s["valid"] == m.splits["valid"]


# -- image decoding and preprocessing --------------------------------------

def test_pnm_round_trip_and_maxval(tmp_path):
    img = (np.arange(12, dtype=np.uint8) * 20).reshape(3, 4)
    write_pnm(tmp_path / "a.pgm", img)
    assert np.array_equal(read_pnm(tmp_path / "a.pgm"), img)
    rgb = np.stack([img, img[::-1], img * 0], axis=-1)
    write_pnm(tmp_path / "b.ppm", rgb)
    assert np.array_equal(read_pnm(tmp_path / "b.ppm"), rgb)
    (tmp_path / "c.pgm").write_bytes(b"P5\n# comment\n2 1\n15\n\x0f\x00")
    assert read_pnm(tmp_path / "c.pgm").tolist() == [[255, 0]]


def test_decode_errors_name_path(tmp_path):
    bad = tmp_path / "bad.pgm"
    bad.write_bytes(b"P5\n4 4\n255\n\x00\x01")
    with pytest.raises(DecodeError, match="bad.pgm"):
        load_and_preprocess(bad, PreprocessConfig((4, 4)))
    with pytest.raises(FormatError):
        (tmp_path / "x.bmp").write_bytes(b"BM")
        load_and_preprocess(tmp_path / "x.bmp", PreprocessConfig((4, 4)))


def test_uniform_255_maps_to_ones(tmp_path):
    write_pnm(tmp_path / "w.pgm", np.full((10, 14), 255, np.uint8))
    out = load_and_preprocess(tmp_path / "w.pgm", PreprocessConfig((8, 8)))
    assert out.shape == (1, 8, 8) and np.all(out == 1.0)


def test_one_pixel_resize_is_constant(tmp_path):
    write_pnm(tmp_path / "p.pgm", np.array([[77]], np.uint8))
    out = load_and_preprocess(tmp_path / "p.pgm", PreprocessConfig((224, 224)))
    assert out.shape == (1, 224, 224) and np.all(out == np.float32(77 / 255))


def test_bilinear_two_by_two_hand_grid(tmp_path):
    write_pnm(tmp_path / "c.pgm", np.array([[0, 255], [255, 0]], np.uint8))
    out = load_and_preprocess(tmp_path / "c.pgm", PreprocessConfig((4, 4)))[0]
    hand = np.array([
        [0.0, 63.75, 191.25, 255.0],
        [63.75, 95.625, 159.375, 191.25],
        [191.25, 159.375, 95.625, 63.75],
        [255.0, 191.25, 63.75, 0.0],
    ]) / 255
    np.testing.assert_allclose(out, hand, atol=1e-4)


def test_channel_conversion(tmp_path):
    rgb = np.zeros((2, 2, 3), np.uint8)
    rgb[..., 0] = 255
    write_pnm(tmp_path / "r.ppm", rgb)
    gray = load_and_preprocess(tmp_path / "r.ppm", PreprocessConfig((2, 2), channels=1))
    np.testing.assert_allclose(gray, 0.299, atol=1e-6)
    write_pnm(tmp_path / "g.pgm", np.full((2, 2), 51, np.uint8))
    three = load_and_preprocess(tmp_path / "g.pgm", PreprocessConfig((2, 2), channels=3))
    assert three.shape == (3, 2, 2) and np.allclose(three, 0.2)


# -- augmentation -----------------------------------------------------------

def test_identity_and_double_flip():
    img = Rng(1).uniform((1, 16, 16)).astype(np.float32)
    same = augment(img, AugmentConfig.identity(), Rng(5))
    assert same.tobytes() == img.tobytes()
    forced = AugmentConfig(0.0, 1.0, (1.0, 1.0), 0.0)
    once = augment(img, forced, Rng(2))
    assert np.array_equal(once, img[:, :, ::-1])
    assert augment(once, forced, Rng(3)).tobytes() == img.tobytes()
    assert hflip(hflip(img)).tobytes() == img.tobytes()


def test_augment_range_over_many_draws():
    img = Rng(6).uniform((1, 12, 12)).astype(np.float32)
    cfg = AugmentConfig(15.0, 0.5, (0.9, 1.1), 0.1)
    rng = Rng(7)
    for _ in range(1000):
        out = augment(img, cfg, rng)
        assert out.shape == img.shape and out.min() >= 0 and out.max() <= 1


def test_augment_is_deterministic_and_uses_zero_fill():
    img = np.ones((1, 9, 9), np.float32)
    cfg = AugmentConfig(30.0, 0.5, (0.9, 1.1), 0.2)
    a, b = augment(img, cfg, Rng(8)), augment(img, cfg, Rng(8))
    assert a.tobytes() == b.tobytes()
    rotated = augment(img, AugmentConfig(45.0, 0.0, (1.0, 1.0), 0.0), Rng(0))
    assert rotated.min() < 1.0 and rotated[0, 4, 4] == pytest.approx(1.0)


def test_augment_config_validation():
    with pytest.raises(ParameterError):
        AugmentConfig(zoom_range=(1.1, 1.2))
    with pytest.raises(ParameterError):
        AugmentConfig(horizontal_flip_prob=1.5)


# -- batching ---------------------------------------------------------------

def test_batch_sizes_and_labels():
    items = [(np.zeros((1, 2, 2), np.float32), i % 3) for i in range(70)]
    batches = list(make_batches(items, 3, 32))
    assert [len(y) for _, y in batches] == [32, 32, 6]
    assert all(np.all(y.sum(axis=1) == 1) for _, y in batches)
    labels = np.concatenate([y.argmax(axis=1) for _, y in batches]).tolist()
    assert labels == [i % 3 for i in range(70)]
    with pytest.raises(IngestionError):
        make_batches([], 3, 4)


def test_shuffled_batches_replay_and_cover_all():
    items = pattern_arrays(10, size=8)
    cfg = AugmentConfig()

    def run(seed):
        return [(x.tobytes(), y.tobytes()) for x, y in make_batches(items, 2, 6, True, Rng(seed), augment_config=cfg)]

    assert run(4) == run(4) and run(4) != run(5)
    seen = [x for x, _ in make_batches([(np.full((1, 1, 1), i, np.float32), 0) for i in range(20)],
                                       1, 7, True, Rng(1))]
    assert sorted(np.concatenate(seen).ravel().tolist()) == list(range(20))


def test_loader_caches_paths(tmp_path):
    write_pnm(tmp_path / "a.pgm", np.full((4, 4), 10, np.uint8))
    loader = ImageLoader(PreprocessConfig((4, 4)))
    assert loader(tmp_path / "a.pgm") is loader(str(tmp_path / "a.pgm"))
