import gzip
import struct

import numpy as np
import pytest

from bayes.acquisition import acquire_random, acquire_topk
from data import fetch
from data.dataset import Dataset, Pool
from data.fetch import PUBLISHED_SIZES
from data.idx import FASHION_FILES, load_fashion, load_idx, parse_images, parse_labels
from data.partition import (
    build_pool,
    build_replay,
    normalize_assignment,
    partition_type1,
    quarter_split,
    random_sample,
    split_validation,
)
from utils.errors import (
    BadMagicError,
    CountMismatchError,
    DataFetchError,
    PartitionError,
    PoolDepletedError,
    SamplingError,
    TruncatedPayloadError,
)
from utils.verification import small_model


def idx_images(pixels: np.ndarray) -> bytes:
    count, rows, cols = pixels.shape
    return struct.pack(">IIII", 0x803, count, rows, cols) + pixels.astype(np.uint8).tobytes()


def idx_labels(labels) -> bytes:
    return struct.pack(">II", 0x801, len(labels)) + bytes(labels)


@pytest.fixture
def idx_pair(tmp_path):
    pixels = np.arange(3 * 28 * 28).reshape(3, 28, 28) % 256
    images = tmp_path / "images-idx3-ubyte"
    labels = tmp_path / "labels-idx1-ubyte"
    images.write_bytes(idx_images(pixels))
    labels.write_bytes(idx_labels([3, 1, 9]))
    return images, labels, pixels


def test_load_idx_scales_pixels(idx_pair):
    images, labels, pixels = idx_pair
    data = load_idx(images, labels)
    assert data.images.shape == (3, 28, 28, 1)
    assert data.images.dtype == np.float32
    np.testing.assert_allclose(data.images[..., 0], pixels / 255.0, rtol=1e-6)
    np.testing.assert_array_equal(data.labels, [3, 1, 9])


def test_load_idx_reads_gzip(idx_pair, tmp_path):
    images, labels, _ = idx_pair
    packed = tmp_path / "images.gz"
    packed.write_bytes(gzip.compress(images.read_bytes()))
    np.testing.assert_array_equal(load_idx(packed, labels).images, load_idx(images, labels).images)


def test_bad_magic():
    with pytest.raises(BadMagicError):
        parse_images(struct.pack(">IIII", 0x801, 1, 28, 28) + bytes(784))
    with pytest.raises(BadMagicError):
        parse_labels(struct.pack(">II", 0x803, 1) + bytes(1))


def test_truncated_payload():
    with pytest.raises(TruncatedPayloadError):
        parse_images(struct.pack(">IIII", 0x803, 2, 28, 28) + bytes(784))
    with pytest.raises(TruncatedPayloadError):
        parse_labels(struct.pack(">II", 0x801, 5) + bytes(3))
    with pytest.raises(TruncatedPayloadError):
        parse_labels(b"\x00\x00")


def test_count_mismatch(idx_pair, tmp_path):
    images, _, _ = idx_pair
    labels = tmp_path / "short-labels"
    labels.write_bytes(idx_labels([1, 2]))
    with pytest.raises(CountMismatchError) as info:
        load_idx(images, labels)
    assert info.value.path == str(labels)


def test_load_fashion_prefers_plain_files(tmp_path):
    pixels = np.zeros((2, 28, 28))
    for key, name in FASHION_FILES.items():
        payload = idx_images(pixels) if "images" in key else idx_labels([0, 1])
        (tmp_path / name).write_bytes(payload)
    train, test = load_fashion(tmp_path)
    assert len(train) == 2 and len(test) == 2


def test_dataset_validation():
    with pytest.raises(ValueError):
        Dataset(np.zeros((2, 28, 28, 1)), np.array([0]))
    with pytest.raises(ValueError):
        Dataset(np.zeros((1, 28, 28, 1)), np.array([10]))


def test_partition_type1_shards_hold_only_their_classes(fashion_like):
    train, _ = fashion_like
    shards = partition_type1(train)
    assert [s.device_id for s in shards] == [1, 2, 3, 4]
    assert sorted(shards[2].allowed_classes) == [4, 5, 6]
    seen = set()
    for shard in shards:
        assert set(np.unique(shard.data.labels)) == set(shard.allowed_classes)
        ids = set(shard.data.item_ids.tolist())
        assert not ids & seen
        seen |= ids
    assert len(seen) == len(train)


def test_assignment_must_partition_classes():
    with pytest.raises(PartitionError):
        normalize_assignment([(0, 1), (1, 2), (3, 4, 5, 6, 7, 8, 9)])
    with pytest.raises(PartitionError):
        normalize_assignment([(0, 1), (2, 3)])
    with pytest.raises(PartitionError):
        normalize_assignment({1: (), 2: tuple(range(10))})


def test_split_validation_is_disjoint_and_seeded(fashion_like):
    train, _ = fashion_like
    rest, validation = split_validation(train, 50, seed=4)
    assert len(validation) == 50 and len(rest) == len(train) - 50
    assert not set(rest.item_ids) & set(validation.item_ids)
    again = split_validation(train, 50, seed=4)[1]
    np.testing.assert_array_equal(validation.item_ids, again.item_ids)
    with pytest.raises(SamplingError):
        split_validation(train, len(train) + 1, seed=0)


def test_quarter_split_covers_train(fashion_like):
    train, _ = fashion_like
    parts = quarter_split(train, 4, seed=0)
    assert sum(len(p) for p in parts) == len(train)
    assert max(len(p) for p in parts) - min(len(p) for p in parts) <= 1


def test_random_sample(fashion_like):
    train, _ = fashion_like
    sample = random_sample(train, 400, seed=1)
    assert len(sample) == 400
    assert len(set(sample.item_ids.tolist())) == 400
    np.testing.assert_array_equal(sample.item_ids, random_sample(train, 400, seed=1).item_ids)
    with pytest.raises(SamplingError):
        random_sample(train, len(train) + 1)


def test_build_pool_and_replay(fashion_like):
    train, _ = fashion_like
    pool = build_pool(train, 100, seed=2, device_id=3)
    assert isinstance(pool, Pool)
    assert len(pool) == 100 and pool.device_id == 3
    assert len(pool.available) == 100
    marked = pool.mark_acquired([0, 5])
    assert len(marked.available) == 98 and len(pool.available) == 100

    replay = build_replay(train, 5, seed=0)
    assert len(replay) == 50
    np.testing.assert_array_equal(replay.data.class_counts(), np.full(10, 5))
    with pytest.raises(SamplingError):
        build_replay(train, 61, seed=0)


def test_empty_pool_rejects_acquisition(fashion_like):
    train, _ = fashion_like
    pool = build_pool(train, 0, seed=0, device_id=1)
    assert len(pool) == 0 and len(pool.available) == 0
    model = small_model(0, dtype=np.float32)
    with pytest.raises(PoolDepletedError):
        acquire_topk(model, pool, 1, r=1)
    with pytest.raises(PoolDepletedError):
        acquire_random(pool, 1)


class FakeResponse:
    def __init__(self, payload: bytes):
        self.payload = payload

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        return False

    def raise_for_status(self):
        pass

    def iter_content(self, chunk_size):
        yield self.payload


def test_fetch_downloads_and_checks_sizes(tmp_path, monkeypatch):
    requested = []

    def fake_get(url, stream, timeout):
        requested.append(url)
        return FakeResponse(bytes(PUBLISHED_SIZES[url.rsplit("/", 1)[1]]))

    monkeypatch.setattr(fetch.requests, "get", fake_get)
    paths = fetch.fetch_fashion(tmp_path, "http://mirror.test")
    assert len(requested) == 4 and requested[0].startswith("http://mirror.test/")
    assert all(p.stat().st_size == PUBLISHED_SIZES[p.name] for p in paths.values())

    fetch.fetch_fashion(tmp_path, "http://mirror.test")
    assert len(requested) == 4


def test_fetch_rejects_wrong_size(tmp_path, monkeypatch):
    monkeypatch.setattr(fetch.requests, "get", lambda url, stream, timeout: FakeResponse(b"short"))
    with pytest.raises(DataFetchError):
        fetch.fetch_fashion(tmp_path, "http://mirror.test")


def test_fetch_wraps_network_errors(tmp_path, monkeypatch):
    def broken(url, stream, timeout):
        raise fetch.requests.ConnectionError("offline")

    monkeypatch.setattr(fetch.requests, "get", broken)
    with pytest.raises(DataFetchError):
        fetch.fetch_fashion(tmp_path, "http://mirror.test")
    assert not list(tmp_path.glob("*.part"))
