from __future__ import annotations

import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Iterable, Sequence

from purebox.corpus.classes import ClassSpec
from purebox.corpus.manifest import Manifest, ManifestEntry, content_hash
from purebox.corpus.sources import SourceAdapter
from purebox.errors import EmptyResult

log = logging.getLogger(__name__)


def image_path(root: str | Path, class_id: str, digest: str, ext: str = "png") -> Path:
    return Path(root) / class_id / f"{digest}.{ext}"


def find_image(root: str | Path, class_id: str, digest: str) -> Path:
    matches = list((Path(root) / class_id).glob(f"{digest}.*"))
    if not matches:
        raise FileNotFoundError(f"no stored image for {class_id}/{digest}")
    return matches[0]


def acquire_images(class_spec: ClassSpec, source: SourceAdapter, limit: int,
                   seen: Iterable[str] = (), store_root: str | Path | None = None) -> list[ManifestEntry]:
    """Pull up to ``limit`` new, distinct images of one class from ``source``.

    Hashes in ``seen`` (and repeats within this pull) are skipped. When
    ``store_root`` is given the bytes land at ``<root>/<class_id>/<hash>.<ext>``.
    """
    if limit < 1:
        raise ValueError("limit must be >= 1")
    seen = set(seen)
    entries = []
    got_any = False
    for raw in source.fetch(class_spec, limit):
        got_any = True
        digest = content_hash(raw.data)
        if digest in seen:
            continue
        seen.add(digest)
        if store_root is not None:
            path = image_path(store_root, class_spec.class_id, digest, raw.ext)
            path.parent.mkdir(parents=True, exist_ok=True)
            if not path.exists():
                path.write_bytes(raw.data)
        entries.append(ManifestEntry(digest, raw.source_url, class_spec.class_id))
        if len(entries) >= limit:
            break
    if not got_any:
        raise EmptyResult(f"source returned no images for {class_spec.class_id}")
    return entries


def acquire_many(classes: Sequence[ClassSpec], source: SourceAdapter, limit: int,
                 manifest: Manifest | None = None, store_root: str | Path | None = None,
                 workers: int = 1) -> Manifest:
    """Acquire several classes, fetching concurrently but mutating the manifest under one lock."""
    manifest = manifest if manifest is not None else Manifest()
    lock = threading.Lock()
    with lock:
        seen = frozenset(manifest.hashes)

    def one(spec):
        entries = acquire_images(spec, source, limit, seen=seen, store_root=store_root)
        with lock:
            added = manifest.extend(entries)
        log.info("acquired %d images for %s", added, spec.class_id)

    if workers <= 1:
        for spec in classes:
            one(spec)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(one, classes))
    # keep class order stable regardless of thread completion order
    order = {c.class_id: i for i, c in enumerate(classes)}
    manifest.entries.sort(key=lambda e: order.get(e.class_id, len(order)))
    return manifest
