import json
import threading

import numpy as np
import pytest

from evohpo.checkpoints import (CheckpointIntegrityError, CheckpointNotFound, CheckpointStore,
                                CheckpointWriteError, content_hash)
from evohpo.trainer import MlpModel, TrainHparams, init_model, make_dataset, train_epoch


@pytest.fixture
def store(tmp_path):
    return CheckpointStore(tmp_path)


def trained(seed=0):
    d = make_dataset(0, 300, "blobs")
    m, _ = train_epoch(init_model((2, 6, 3), seed), d, TrainHparams(0.1), np.random.default_rng(seed))
    return m


def test_round_trip_bit_identical(store):
    m = trained()
    ckpt = store.save(m, 3, 7)
    back = store.load(ckpt)
    assert back.same_as(m)
    assert back.epoch_counter == 1
    assert store.hash_of(ckpt) == content_hash(m.to_bytes())


def test_identical_content_hash_equal(store):
    m = trained()
    a, b = store.save(m, 0, 0), store.save(m, 0, 1)
    assert a != b
    assert store.hash_of(a) == store.hash_of(b)


def test_non_finite_rejected(store):
    m = init_model((2, 3), 0)
    w = np.array(m.weights[0])
    w[0, 0] = np.nan
    bad = MlpModel(m.layer_sizes, (w,), m.biases)
    with pytest.raises(ValueError):
        store.save(bad)
    assert len(store) == 0 and store.on_disk() == set()


def test_unknown_id(store):
    with pytest.raises(CheckpointNotFound):
        store.load("g00000-s0000-0000000000000000")
    with pytest.raises(KeyError):
        store.hash_of("nope")


@pytest.mark.parametrize("keep", [0, 10, -8])
def test_truncation_is_integrity_error(store, keep):
    ckpt = store.save(trained())
    path = store.path(ckpt)
    path.write_bytes(path.read_bytes()[:keep])
    with pytest.raises(CheckpointIntegrityError):
        store.load(ckpt)


def test_bit_flip_is_integrity_error(store):
    ckpt = store.save(trained())
    path = store.path(ckpt)
    blob = bytearray(path.read_bytes())
    blob[-3] ^= 0x01
    path.write_bytes(bytes(blob))
    with pytest.raises(CheckpointIntegrityError):
        store.load(ckpt)


def test_deleted_blob_is_not_found(store):
    ckpt = store.save(trained())
    store.path(ckpt).unlink()
    with pytest.raises(CheckpointNotFound):
        store.load(ckpt)


def test_gc_all_live_removes_nothing(store):
    ids = {store.save(trained(s), 0, s) for s in range(4)}
    assert store.collect_garbage(ids) == 0
    assert store.on_disk() == ids


def test_gc_empty_live_empties_store(store):
    for s in range(4):
        store.save(trained(s), 0, s)
    assert store.collect_garbage(set()) == 4
    assert store.on_disk() == set() and len(store) == 0


def test_gc_keeps_pinned_and_removes_strays(store):
    ids = [store.save(trained(s), 0, s) for s in range(5)]
    store.pin(ids[4])
    (store.blob_dir / "g00009-s0000-deadbeefdeadbeef.ckpt").write_bytes(b"junk")
    store.collect_garbage({ids[0], ids[1]})
    assert store.on_disk() == {ids[0], ids[1], ids[4]}
    assert store.ids() == {ids[0], ids[1], ids[4]}


def test_pin_unknown(store):
    with pytest.raises(CheckpointNotFound):
        store.pin("missing")


def test_manifest_survives_reopen(tmp_path):
    s1 = CheckpointStore(tmp_path)
    ckpt = s1.save(trained(), 2, 1)
    s1.pin(ckpt)
    s2 = CheckpointStore(tmp_path)
    assert s2.load(ckpt).same_as(trained())
    assert s2.pinned == {ckpt}
    doc = json.loads((tmp_path / "manifest.json").read_text())
    assert doc["blobs"][ckpt]["generation"] == 2


def test_concurrent_readers_see_identical_bytes(store):
    ckpt = store.save(trained())
    results, errors = [], []

    def reader():
        try:
            for _ in range(20):
                results.append(store.read_bytes(ckpt))
        except Exception as exc:  # pragma: no cover - reported below
            errors.append(exc)

    threads = [threading.Thread(target=reader) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert not errors
    assert len(results) == 160 and len(set(results)) == 1


def test_concurrent_saves_all_recorded(store):
    models = [trained(s) for s in range(8)]
    ids = [None] * 8

    def saver(i):
        ids[i] = store.save(models[i], 1, i)

    threads = [threading.Thread(target=saver, args=(i,)) for i in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert store.ids() == set(ids) == store.on_disk()
    assert CheckpointStore(store.root).ids() == set(ids)


def test_write_failure_is_wrapped(store, monkeypatch):
    import evohpo.checkpoints as mod

    def broken(path, data):
        raise PermissionError("read-only volume")

    monkeypatch.setattr(mod, "_atomic_write", broken)
    with pytest.raises(CheckpointWriteError) as info:
        store.save(trained())
    assert isinstance(info.value, OSError)
