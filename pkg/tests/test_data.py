import struct

import numpy as np
import pytest

from plae.data import (
    BadMagicError,
    CountMismatchError,
    Dataset,
    ParseError,
    PreprocessError,
    TruncatedFileError,
    load_cifar_bin,
    load_idx,
    preprocess,
    resize_bilinear,
    select_classes,
    synthetic_dataset,
    write_cifar_bin,
    write_idx,
)
from plae.probe import ProbeSettings, fit_probe, probe_accuracy


def idx_bytes(magic, dims, payload):
    return struct.pack(">I", magic) + struct.pack(f">{len(dims)}I", *dims) + bytes(payload)


@pytest.fixture
def tiny_idx(tmp_path):
    img = tmp_path / "img"
    lab = tmp_path / "lab"
    img.write_bytes(idx_bytes(0x803, (1, 2, 2), [0, 255, 128, 64]))
    lab.write_bytes(idx_bytes(0x801, (1,), [3]))
    return img, lab


def test_idx_hand_built(tiny_idx):
    images, labels = load_idx(*tiny_idx)
    assert images.shape == (1, 2, 2)
    np.testing.assert_allclose(images[0], [[0, 1], [0.50196, 0.25098]], atol=1e-5)
    assert labels.tolist() == [3]


def test_idx_bad_magic_names_it(tiny_idx, tmp_path):
    bad = tmp_path / "bad"
    bad.write_bytes(idx_bytes(0x804, (1, 2, 2), [0, 0, 0, 0]))
    with pytest.raises(BadMagicError, match="0x00000804"):
        load_idx(bad, tiny_idx[1])


def test_idx_truncated(tiny_idx, tmp_path):
    cut = tmp_path / "cut"
    cut.write_bytes(tiny_idx[0].read_bytes()[:-1])
    with pytest.raises(TruncatedFileError):
        load_idx(cut, tiny_idx[1])
    short = tmp_path / "short"
    short.write_bytes(b"\x00\x00")
    with pytest.raises(TruncatedFileError):
        load_idx(short, tiny_idx[1])


def test_idx_count_mismatch(tiny_idx, tmp_path):
    lab2 = tmp_path / "lab2"
    lab2.write_bytes(idx_bytes(0x801, (2,), [1, 2]))
    with pytest.raises(CountMismatchError):
        load_idx(tiny_idx[0], lab2)


def test_parse_errors_are_distinct():
    kinds = {BadMagicError, TruncatedFileError, CountMismatchError}
    assert len(kinds) == 3 and all(issubclass(k, ParseError) for k in kinds)


def test_idx_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    x = rng.integers(0, 256, size=(5, 28, 28), dtype=np.uint8)
    y = rng.integers(0, 10, size=5, dtype=np.uint8)
    write_idx(tmp_path / "i", tmp_path / "l", x, y)
    xi, yi = load_idx(tmp_path / "i", tmp_path / "l")
    np.testing.assert_array_equal((xi * 255).round().astype(np.uint8), x)
    np.testing.assert_array_equal(yi, y)


def test_real_mnist_fixture_counts(mnist_idx):
    x, y = load_idx(mnist_idx["train_images"], mnist_idx["train_labels"])
    assert x.shape == (4000, 28, 28)
    assert 0.0 <= x.min() and x.max() <= 1.0
    assert set(np.unique(y)) == set(range(10))


def test_cifar_single_record(tmp_path):
    path = tmp_path / "b.bin"
    path.write_bytes(bytes([7]) + bytes([255]) * 3072)
    images, labels = load_cifar_bin([path])
    assert images.shape == (1, 3, 32, 32)
    assert np.all(images == 1.0)
    assert labels.tolist() == [7]


def test_cifar_channel_major_layout(tmp_path):
    planes = np.zeros((1, 3, 32, 32), np.uint8)
    planes[0, 0] = 10
    planes[0, 1] = 20
    planes[0, 2] = 30
    write_cifar_bin(tmp_path / "c.bin", planes, [1])
    raw = (tmp_path / "c.bin").read_bytes()
    assert raw[0] == 1 and raw[1] == 10 and raw[1 + 1024] == 20 and raw[1 + 2048] == 30
    images, _ = load_cifar_bin(tmp_path / "c.bin")
    np.testing.assert_allclose(images[0, :, 0, 0], [10 / 255, 20 / 255, 30 / 255], rtol=1e-6)


def test_cifar_empty_file(tmp_path):
    (tmp_path / "e.bin").write_bytes(b"")
    images, labels = load_cifar_bin([tmp_path / "e.bin"])
    assert images.shape == (0, 3, 32, 32) and labels.shape == (0,)


def test_cifar_bad_length(tmp_path):
    (tmp_path / "x.bin").write_bytes(b"\x00" * 3074)
    with pytest.raises(ParseError):
        load_cifar_bin([tmp_path / "x.bin"])


def test_cifar_multiple_files_concatenate(tmp_path):
    rng = np.random.default_rng(1)
    for i in range(2):
        write_cifar_bin(tmp_path / f"{i}.bin", rng.integers(0, 256, (3, 3, 32, 32)), [i] * 3)
    _, labels = load_cifar_bin([tmp_path / "0.bin", tmp_path / "1.bin"])
    assert labels.tolist() == [0, 0, 0, 1, 1, 1]


def test_preprocess_constant_mnist():
    ds = preprocess(np.full((2, 28, 28), 0.5, np.float32), "mnist")
    assert ds.images.shape == (2, 3, 64, 64)
    assert np.all(ds.images == 0.5)


def test_preprocess_quadrants_identical():
    rng = np.random.default_rng(2)
    for raw, kind in ((rng.random((3, 28, 28)), "mnist"), (rng.random((3, 3, 32, 32)), "cifar10")):
        img = preprocess(raw, kind).images
        np.testing.assert_array_equal(img[:, :, :32, :32], img[:, :, 32:, 32:])
        np.testing.assert_array_equal(img[:, :, :32, :32], img[:, :, :32, 32:])
        np.testing.assert_array_equal(img[:, :, :32, :32], img[:, :, 32:, :32])


def test_preprocess_mnist_channels_bytewise_equal():
    img = preprocess(np.random.default_rng(3).random((2, 28, 28)), "mnist").images
    assert img[:, 0].tobytes() == img[:, 1].tobytes() == img[:, 2].tobytes()


def test_preprocess_rejects_wrong_shape_and_reapplication():
    with pytest.raises(PreprocessError):
        preprocess(np.zeros((1, 32, 32)), "mnist")
    with pytest.raises(PreprocessError):
        preprocess(np.zeros((1, 3, 28, 28)), "cifar10")
    ds = preprocess(np.zeros((1, 28, 28)), "mnist")
    with pytest.raises(PreprocessError):
        preprocess(ds, "mnist")
    with pytest.raises(PreprocessError):
        preprocess(ds.images, "cifar10")


def test_preprocess_deterministic():
    raw = np.random.default_rng(4).random((2, 28, 28)).astype(np.float32)
    assert preprocess(raw, "mnist").images.tobytes() == preprocess(raw, "mnist").images.tobytes()


def test_resize_bilinear_linear_ramp():
    # half-pixel centres reproduce a linear ramp away from the clamped edges
    ramp = np.tile(np.arange(8, dtype=np.float64), (8, 1))
    out = resize_bilinear(ramp, 8, 16)
    src = (np.arange(16) + 0.5) / 2 - 0.5
    np.testing.assert_allclose(out[0, 1:-1], src[1:-1])


def test_synthetic_deterministic():
    a = synthetic_dataset(2, 10, seed=1)
    b = synthetic_dataset(2, 10, seed=1)
    assert a.images.tobytes() == b.images.tobytes()
    assert a.labels.tobytes() == b.labels.tobytes()


def test_synthetic_balanced():
    ds = synthetic_dataset(4, 50, seed=7)
    assert len(ds) == 200
    assert np.bincount(ds.labels).tolist() == [50, 50, 50, 50]
    assert ds.images.min() >= 0 and ds.images.max() <= 1


def test_synthetic_raw_pixel_probe():
    train = synthetic_dataset(2, 100, seed=3)
    test = synthetic_dataset(2, 100, seed=3 + 10_000)
    flat = lambda d: d.images.reshape(len(d), -1)
    probe = fit_probe(flat(train), train.labels, ProbeSettings())
    assert probe_accuracy(probe, flat(test), test.labels) >= 0.99


def test_label_counter():
    ds = synthetic_dataset(2, 3, seed=0)
    view = ds.unlabelled_view()
    assert view.label_reads == 0
    _ = view.images
    assert view.label_reads == 0
    _ = view.labels
    assert view.label_reads == 1
    assert ds.label_reads == 0


def test_at_side_box_downsample():
    ds = synthetic_dataset(2, 2, seed=0)
    small = ds.at_side(32)
    assert small.images.shape == (4, 3, 32, 32)
    np.testing.assert_allclose(small.images[0, 0, 0, 0], ds.images[0, 0, :2, :2].mean(), rtol=1e-6)
    with pytest.raises(PreprocessError):
        ds.at_side(48)


def test_select_classes_relabels():
    images = np.arange(6)[:, None]
    labels = np.array([3, 1, 3, 2, 1, 0])
    x, y = select_classes(images, labels, [1, 3], limit=3)
    assert x[:, 0].tolist() == [0, 1, 2]
    assert y.tolist() == [1, 0, 1]


def test_dataset_rejects_bad_shape():
    with pytest.raises(PreprocessError):
        Dataset(np.zeros((2, 1, 4, 4)), np.zeros(2), "x", 2)
