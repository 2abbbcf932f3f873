import threading

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import png
from purebox.corpus import (
    CANONICAL_CLASSES,
    GENERATOR_CLASS_COUNT,
    HttpSource,
    LabeledSet,
    LocalDirectorySource,
    Manifest,
    ManifestEntry,
    MemorySource,
    SyntheticSource,
    acquire_images,
    acquire_many,
    content_hash,
    curate,
    find_image,
    label_map,
    load_pixels,
    load_verdicts,
    one_vs_all,
    save_verdicts,
    select_class_subset,
    split_dataset,
    validate_class_list,
)
from purebox.errors import EmptyResult, InsufficientData, OutOfRange, SourceUnavailable, UnknownHash

TRAILER = CANONICAL_CLASSES[0]
TANK = CANONICAL_CLASSES[1]


# -- class list

def test_canonical_list_shape():
    validate_class_list(CANONICAL_CLASSES)
    assert len(CANONICAL_CLASSES) == 25
    assert [c.rank for c in CANONICAL_CLASSES] == list(range(1, 26))
    assert len({c.class_id for c in CANONICAL_CLASSES}) == 25


def test_subset_first_two():
    assert [c.class_id for c in select_class_subset(CANONICAL_CLASSES, 2)] == ["n04467665", "n04389033"]


def test_subset_full_and_generator_subset():
    assert select_class_subset(CANONICAL_CLASSES, 25) == list(CANONICAL_CLASSES)
    six = select_class_subset(CANONICAL_CLASSES, GENERATOR_CLASS_COUNT)
    assert six == list(CANONICAL_CLASSES[:6])
    assert label_map(six) == {c.class_id: i for i, c in enumerate(six)}


@pytest.mark.parametrize("k", [0, 26, -1])
def test_subset_out_of_range(k):
    with pytest.raises(OutOfRange):
        select_class_subset(CANONICAL_CLASSES, k)


@given(st.integers(1, 25), st.integers(1, 25))
def test_subset_prefix_property(j, k):
    j, k = min(j, k), max(j, k)
    assert select_class_subset(CANONICAL_CLASSES, k)[:j] == select_class_subset(CANONICAL_CLASSES, j)


def test_subset_uses_rank_not_position():
    shuffled = list(reversed(CANONICAL_CLASSES))
    assert select_class_subset(shuffled, 3) == list(CANONICAL_CLASSES[:3])


# -- acquisition

def test_acquire_limit_exceeds_supply():
    source = MemorySource([png(None, seed=i) for i in range(5)])
    assert len(acquire_images(TRAILER, source, 10)) == 5


def test_acquire_dedupes_identical_bytes():
    images = [png(None, seed=i) for i in range(4)]
    images.insert(2, images[1])
    entries = acquire_images(TRAILER, MemorySource(images), 10)
    assert len(entries) == 4
    assert all(e.class_id == TRAILER.class_id and not e.curated for e in entries)


def test_acquire_synthetic_count():
    entries = acquire_images(TANK, SyntheticSource(2000, resolution=8), 1100)
    assert len(entries) == 1100
    assert len({e.content_hash for e in entries}) == 1100


def test_acquire_skips_seen_hashes():
    images = [png(None, seed=i) for i in range(5)]
    seen = {content_hash(images[0]), content_hash(images[3])}
    assert len(acquire_images(TRAILER, MemorySource(images), 10, seen=seen)) == 3


def test_acquire_empty_source():
    with pytest.raises(EmptyResult):
        acquire_images(TRAILER, MemorySource([]), 10)


def test_acquire_writes_layout(tmp_path):
    images = [png(None, seed=i) for i in range(3)]
    entries = acquire_images(TRAILER, MemorySource(images), 10, store_root=tmp_path)
    for e, data in zip(entries, images):
        path = tmp_path / TRAILER.class_id / f"{e.content_hash}.png"
        assert path.read_bytes() == data
        assert find_image(tmp_path, TRAILER.class_id, e.content_hash) == path


def test_dedupe_idempotence(tmp_path):
    source = SyntheticSource(30, resolution=8, duplicate_every=4)
    classes = CANONICAL_CLASSES[:3]
    once = acquire_many(classes, source, 30)
    twice = acquire_many(classes, source, 30, manifest=acquire_many(classes, source, 30))
    assert once.hashes == twice.hashes
    assert len(twice) == len(once)


def test_concurrent_acquire_matches_serial():
    source = SyntheticSource(20, resolution=8)
    classes = CANONICAL_CLASSES[:5]
    serial = acquire_many(classes, source, 20)
    parallel = acquire_many(classes, source, 20, workers=4)
    assert [e.content_hash for e in serial] == [e.content_hash for e in parallel]


def test_local_directory_source(tmp_path):
    folder = tmp_path / TRAILER.class_id
    folder.mkdir()
    for i in range(3):
        (folder / f"{i}.png").write_bytes(png(None, seed=i))
    (folder / "notes.txt").write_text("ignored")
    assert len(acquire_images(TRAILER, LocalDirectorySource(tmp_path), 10)) == 3
    with pytest.raises(SourceUnavailable):
        list(LocalDirectorySource(tmp_path).fetch(TANK, 10))


def test_http_source_fetches_with_retry():
    from http.server import BaseHTTPRequestHandler, HTTPServer

    blobs = {f"/img{i}.png": png(None, seed=i) for i in range(3)}
    hits = {"flaky": 0}

    class Handler(BaseHTTPRequestHandler):
        def do_GET(self):
            if self.path.startswith("/index/"):
                body = "\n".join(f"http://127.0.0.1:{port}{k}" for k in blobs).encode()
            elif self.path == "/img1.png" and hits["flaky"] == 0:
                hits["flaky"] += 1
                self.send_response(503)
                self.end_headers()
                return
            elif self.path in blobs:
                body = blobs[self.path]
            else:
                self.send_response(404)
                self.end_headers()
                return
            self.send_response(200)
            self.end_headers()
            self.wfile.write(body)

        def log_message(self, *a):
            pass

    server = HTTPServer(("127.0.0.1", 0), Handler)
    port = server.server_address[1]
    t = threading.Thread(target=server.serve_forever, daemon=True)
    t.start()
    try:
        source = HttpSource(f"http://127.0.0.1:{port}/index/{{class_id}}", rate_limit=100, backoff=0.01)
        entries = acquire_images(TRAILER, source, 10)
        assert {e.content_hash for e in entries} == {content_hash(b) for b in blobs.values()}
        assert hits["flaky"] == 1
    finally:
        server.shutdown()


def test_http_source_unreachable():
    source = HttpSource("http://127.0.0.1:9/{class_id}", retries=1, backoff=0.0, timeout=0.5)
    with pytest.raises(SourceUnavailable):
        acquire_images(TRAILER, source, 3)


# -- curation

def _manifest(n, class_id=TRAILER.class_id, curated=False):
    return Manifest([ManifestEntry(f"{i:064x}", None, class_id, curated=curated) for i in range(n)])


def test_curate_all_true():
    m = _manifest(4)
    out = curate(m, {h: True for h in m.hashes})
    assert len(out) == 4 and all(e.curated for e in out)


def test_curate_one_false():
    m = _manifest(4)
    verdicts = {e.content_hash: i != 2 for i, e in enumerate(m)}
    assert len(curate(m, verdicts)) == 3


def test_curate_quarter_rejected():
    m = _manifest(1000)
    verdicts = {e.content_hash: i % 4 != 0 for i, e in enumerate(m)}
    assert len(curate(m, verdicts)) == 750


def test_curate_partial_verdicts_leave_rest_untouched():
    m = _manifest(4)
    out = curate(m, {m.entries[0].content_hash: True})
    assert [e.curated for e in out] == [True, False, False, False]


def test_curate_unknown_hash():
    with pytest.raises(UnknownHash):
        curate(_manifest(2), {"f" * 64: True})


def test_verdict_csv_roundtrip(tmp_path):
    m = _manifest(5)
    verdicts = {e.content_hash: i % 2 == 0 for i, e in enumerate(m)}
    save_verdicts(verdicts, tmp_path / "v.csv")
    assert load_verdicts(tmp_path / "v.csv") == verdicts


# -- splitting

def _split_counts(m, class_id=TRAILER.class_id):
    return m.counts()[class_id]


def test_split_thousand_hundred_quota():
    m = split_dataset(_manifest(1100, curated=True), 1000, 100, seed=7)
    c = _split_counts(m)
    assert (c.get("train", 0), c.get("val", 0), c.get("eval", 0)) == (1000, 100, 0)


def test_split_exact_fit():
    c = _split_counts(split_dataset(_manifest(50, curated=True), 40, 10, seed=0))
    assert (c.get("train", 0), c.get("val", 0), c.get("eval", 0)) == (40, 10, 0)


def test_split_insufficient_names_class():
    with pytest.raises(InsufficientData) as err:
        split_dataset(_manifest(30, curated=True), 40, 10, seed=0)
    assert err.value.class_id == TRAILER.class_id
    assert TRAILER.class_id in str(err.value)


def test_split_ignores_uncurated():
    m = Manifest(_manifest(10, curated=True).entries + [ManifestEntry("a" * 64, None, TRAILER.class_id)])
    out = split_dataset(m, 5, 5, seed=0)
    assert {e.content_hash: e.split for e in out}["a" * 64] == "eval"


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31), st.integers(0, 20), st.integers(0, 20), st.integers(40, 60))
def test_split_deterministic_partition(seed, n_train, n_val, n):
    entries = [ManifestEntry(f"{c}{i:063x}", None, cls.class_id, curated=True)
               for c, cls in enumerate(CANONICAL_CLASSES[:3]) for i in range(n)]
    m = Manifest(entries)
    a = split_dataset(m, n_train, n_val, seed)
    b = split_dataset(m, n_train, n_val, seed)
    assert a == b
    assert {e.content_hash for e in a} == m.hashes  # exhaustive, one split per hash
    for cls in CANONICAL_CLASSES[:3]:
        c = a.counts()[cls.class_id]
        assert c.get("train", 0) == n_train and c.get("val", 0) == n_val
        assert c.get("eval", 0) == n - n_train - n_val


def test_split_seed_changes_assignment():
    m = _manifest(200, curated=True)
    a = {e.content_hash: e.split for e in split_dataset(m, 100, 50, 0)}
    b = {e.content_hash: e.split for e in split_dataset(m, 100, 50, 1)}
    assert a != b


def test_manifest_json_roundtrip(tmp_path):
    m = split_dataset(_manifest(20, curated=True), 10, 5, 3)
    m.save(tmp_path / "m.json")
    back = Manifest.load(tmp_path / "m.json")
    assert back == m and back.digest() == m.digest()


def test_manifest_validate_rejects_duplicates():
    e = ManifestEntry("a" * 64, None, TRAILER.class_id)
    with pytest.raises(ValueError):
        Manifest([e, e]).validate(CANONICAL_CLASSES)


def test_manifest_validate_rejects_unknown_class():
    with pytest.raises(ValueError):
        Manifest([ManifestEntry("a" * 64, None, "n00000000")]).validate(CANONICAL_CLASSES)


# -- loading

def test_loaded_pixels_in_unit_box(tiny_corpus):
    _, _, _, splits = tiny_corpus
    for split in splits.values():
        assert split.images.shape[1:] == (3, 16, 16)
        assert float(split.images.min()) >= 0.0 and float(split.images.max()) <= 1.0


def test_split_sizes_and_labels(tiny_corpus):
    _, _, classes, splits = tiny_corpus
    assert len(splits["train"]) == 60 * len(classes)
    assert len(splits["val"]) == 20 * len(classes)
    assert sorted(set(splits["train"].labels.tolist())) == list(range(len(classes)))


def test_load_pixels_resizes(tmp_path):
    (tmp_path / "a.png").write_bytes(png(0.25, size=40))
    px = load_pixels(tmp_path / "a.png", 16)
    assert px.shape == (3, 16, 16)
    assert np.allclose(px, 64 / 255, atol=1e-6)


def test_one_vs_all_is_balanced(tiny_corpus):
    train = tiny_corpus[3]["train"]
    binary = one_vs_all(train, positive=2, seed=0)
    labels = binary.labels.tolist()
    assert labels.count(1) == labels.count(0) == 60
    refs = dict(zip(train.refs, train.labels.tolist()))
    assert all((refs[r] == 2) == bool(l) for r, l in zip(binary.refs, labels))


def test_labeled_set_digest_order_free(tiny_corpus):
    val = tiny_corpus[3]["val"]
    perm = np.random.default_rng(0).permutation(len(val))
    assert val.subset(perm).digest() == val.digest()
    assert val.subset(list(range(10))).digest() != val.digest()


def test_synthetic_streams_are_disjoint():
    a = {content_hash(r.data) for r in SyntheticSource(20, 8, stream="attacker").fetch(TRAILER, 20)}
    b = {content_hash(r.data) for r in SyntheticSource(20, 8, stream="target").fetch(TRAILER, 20)}
    assert a and b and not a & b


def test_labeled_set_from_samples_roundtrip(tiny_corpus):
    val = tiny_corpus[3]["val"]
    again = LabeledSet.from_samples(val.samples())
    assert again.digest() == val.digest()
