import gzip
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from landscape_hessian import data


def idx_bytes(magic: int, dims, payload: bytes) -> bytes:
    return struct.pack(">I", magic) + struct.pack(f">{len(dims)}I", *dims) + payload


@pytest.fixture
def tiny_idx(tmp_path):
    """Two 2x2 images with pixels 0 or 255, labels 1 and 0."""
    images = tmp_path / "images.idx"
    labels = tmp_path / "labels.idx"
    images.write_bytes(idx_bytes(0x803, (2, 2, 2), bytes([0, 255, 255, 0, 255, 255, 0, 0])))
    labels.write_bytes(idx_bytes(0x801, (2,), bytes([1, 0])))
    return images, labels


def test_idx_fixture_decodes_exactly(tiny_idx):
    ds = data.load_idx(*tiny_idx, num_classes=2)
    assert (ds.m, ds.n, ds.K) == (2, 4, 2)
    np.testing.assert_array_equal(ds.features, [[-1, 1, 1, -1], [1, 1, -1, -1]])
    np.testing.assert_array_equal(ds.labels, [[0, 1], [1, 0]])


def test_idx_midrange_pixels(tmp_path):
    images, labels = tmp_path / "i", tmp_path / "l"
    images.write_bytes(idx_bytes(0x803, (1, 1, 3), bytes([51, 102, 204])))
    labels.write_bytes(idx_bytes(0x801, (1,), bytes([0])))
    ds = data.load_idx(images, labels, num_classes=2)
    np.testing.assert_array_equal(ds.features[0], [v / 255 * 2 - 1 for v in (51, 102, 204)])


def test_idx_limit_keeps_first_record(tiny_idx):
    ds = data.load_idx(*tiny_idx, limit=1, num_classes=2)
    assert ds.m == 1
    np.testing.assert_array_equal(ds.features[0], [-1, 1, 1, -1])


def test_idx_accepts_gzip(tiny_idx, tmp_path):
    gz = tmp_path / "images.idx.gz"
    gz.write_bytes(gzip.compress(tiny_idx[0].read_bytes()))
    plain = data.load_idx(*tiny_idx, num_classes=2)
    assert data.load_idx(gz, tiny_idx[1], num_classes=2).fingerprint() == plain.fingerprint()


def test_idx_bad_magic(tiny_idx):
    raw = bytearray(tiny_idx[0].read_bytes())
    raw[3] = 0x01
    tiny_idx[0].write_bytes(bytes(raw))
    with pytest.raises(data.BadMagicError) as info:
        data.load_idx(*tiny_idx, num_classes=2)
    assert info.value.offset == 0 and "offset 0" in str(info.value)


def test_idx_label_file_given_as_images(tiny_idx):
    with pytest.raises(data.BadMagicError):
        data.load_idx(tiny_idx[1], tiny_idx[0], num_classes=2)


@pytest.mark.parametrize("cut, offset", [(2, 2), (10, 10), (19, 19)])
def test_idx_truncation(tiny_idx, cut, offset):
    tiny_idx[0].write_bytes(tiny_idx[0].read_bytes()[:cut])
    with pytest.raises(data.TruncatedFileError) as info:
        data.load_idx(*tiny_idx, num_classes=2)
    assert info.value.offset == offset


def test_idx_dimension_overflow(tmp_path, tiny_idx):
    tiny_idx[0].write_bytes(idx_bytes(0x803, (2**31, 2**16, 2**16), b""))
    with pytest.raises(data.DimensionOverflowError) as info:
        data.load_idx(*tiny_idx, num_classes=2)
    assert info.value.offset == 4


def test_idx_label_out_of_range(tiny_idx):
    tiny_idx[1].write_bytes(idx_bytes(0x801, (2,), bytes([1, 7])))
    with pytest.raises(data.LabelRangeError) as info:
        data.load_idx(*tiny_idx, num_classes=2)
    assert info.value.offset == 9


def test_idx_errors_are_distinct():
    kinds = {data.BadMagicError, data.TruncatedFileError, data.DimensionOverflowError, data.LabelRangeError}
    assert len(kinds) == 4 and all(issubclass(k, data.IdxError) for k in kinds)


def test_idx_record_count_mismatch(tiny_idx):
    tiny_idx[1].write_bytes(idx_bytes(0x801, (3,), bytes([1, 0, 1])))
    with pytest.raises(data.DataError):
        data.load_idx(*tiny_idx, num_classes=2)


def test_write_idx_round_trip(tmp_path, rng):
    images = rng.integers(0, 256, size=(5, 3, 4), dtype=np.uint8)
    labels = rng.integers(0, 10, size=5, dtype=np.uint8)
    data.write_idx(tmp_path / "i", images)
    data.write_idx(tmp_path / "l", labels)
    assert (tmp_path / "i").read_bytes()[:4] == b"\x00\x00\x08\x03"
    ds = data.load_idx(tmp_path / "i", tmp_path / "l")
    np.testing.assert_array_equal(ds.features, images.reshape(5, 12) / 255 * 2 - 1)
    np.testing.assert_array_equal(ds.label_indices, labels)


def test_relative_paths_resolve_under_data_dir(tiny_idx, monkeypatch, tmp_path):
    monkeypatch.setenv(data.DATA_DIR_ENV, str(tmp_path))
    monkeypatch.chdir("/")
    ds = data.load_idx(tiny_idx[0].name, tiny_idx[1].name, num_classes=2)
    assert ds.m == 2


def test_mnist_subset_shapes_and_range(mnist_paths):
    ds = data.load_idx(*mnist_paths, limit=1000)
    assert (ds.m, ds.n, ds.K) == (1000, 784, 10)
    assert np.max(np.abs(ds.features)) <= 1.0
    assert np.max(np.linalg.norm(ds.features, axis=1)) <= 28.0
    assert np.bincount(ds.label_indices, minlength=10).min() > 50


# feature tables

def test_table_fixture(tmp_path):
    path = tmp_path / "t.csv"
    path.write_text("label,a,b\n1,0.5,-0.5\n0,1.0,0.0\n")
    ds = data.load_feature_table(path, 2)
    assert (ds.m, ds.n, ds.K) == (2, 2, 2)
    np.testing.assert_array_equal(ds.features, [[0.5, -0.5], [1.0, 0.0]])
    np.testing.assert_array_equal(ds.label_indices, [1, 0])


@pytest.mark.parametrize(
    "text, line",
    [
        ("", 1),
        ("label,a\n", 1),
        ("label,a,b\n1,0.5\n", 2),
        ("label,a,b\n1,0.5,0.1\n0,x,0.2\n", 3),
        ("label,a,b\n1,0.5,0.1\n2,0.1,0.2\n", 3),
        ("label,a,b\n1.5,0.5,0.1\n", 2),
    ],
)
def test_table_errors_carry_line_numbers(tmp_path, text, line):
    path = tmp_path / "t.csv"
    path.write_text(text)
    with pytest.raises(data.TableFormatError) as info:
        data.load_feature_table(path, 2)
    assert info.value.line == line


@settings(max_examples=30, deadline=None)
@given(st.integers(3, 40), st.integers(1, 6), st.integers(2, 4), st.floats(0, 2), st.integers(0, 1000))
def test_table_round_trip(tmp_path_factory, m, n, K, spread, seed):
    ds = data.synthetic_blobs(max(m, K), n, K, spread, seed)
    path = tmp_path_factory.mktemp("table") / "blobs.csv"
    data.write_feature_table(ds, path)
    back = data.load_feature_table(path, K)
    assert np.max(np.abs(back.features - ds.features)) <= 1e-15
    np.testing.assert_array_equal(back.labels, ds.labels)


# container and blobs

def test_dataset_rejects_bad_labels():
    with pytest.raises(data.DataError):
        data.Dataset(np.zeros((2, 2)), np.array([[1.0, 1.0], [0.0, 1.0]]))
    with pytest.raises(data.DataError):
        data.Dataset(np.zeros((2, 2)), np.array([[0.5, 0.5], [0.0, 1.0]]))
    with pytest.raises(data.DataError):
        data.Dataset(np.zeros((0, 2)), np.zeros((0, 2)))
    with pytest.raises(data.DataError):
        data.Dataset(np.array([[np.nan, 0.0]]), np.array([[1.0, 0.0]]))


def test_blobs_deterministic():
    a = data.synthetic_blobs(100, 5, 3, 0.2, seed=4)
    b = data.synthetic_blobs(100, 5, 3, 0.2, seed=4)
    assert a.fingerprint() == b.fingerprint()
    assert a.fingerprint() != data.synthetic_blobs(100, 5, 3, 0.2, seed=5).fingerprint()


def test_blobs_without_spread_collapse_to_class_means():
    ds = data.synthetic_blobs(60, 4, 3, 0.0, seed=2)
    for c in range(3):
        rows = ds.features[ds.label_indices == c]
        assert np.all(rows == rows[0])


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 6), st.integers(0, 50), st.integers(1, 8), st.floats(0, 3), st.integers(0, 10**6))
def test_blobs_are_balanced_and_bounded(K, extra, n, spread, seed):
    ds = data.synthetic_blobs(K + extra, n, K, spread, seed)
    counts = np.bincount(ds.label_indices, minlength=K)
    assert counts.max() - counts.min() <= 1
    assert np.max(np.abs(ds.features)) <= 1.0


def test_blobs_reject_bad_sizes():
    with pytest.raises(ValueError):
        data.synthetic_blobs(3, 2, 4, 0.1, 0)
    with pytest.raises(ValueError):
        data.synthetic_blobs(10, 2, 1, 0.1, 0)
