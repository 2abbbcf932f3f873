"""Image source adapters.

An adapter yields raw encoded images for a class. ``acquire_images`` does the
hashing, dedupe and storage, so adapters only need to produce bytes.
"""
from __future__ import annotations

import hashlib
import io
import logging
import threading
import time
import urllib.error
import urllib.request
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterator, Protocol, Sequence

import numpy as np
from PIL import Image

from purebox.corpus.classes import ClassSpec
from purebox.errors import SourceUnavailable

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".gif", ".webp"}


@dataclass(frozen=True)
class RawImage:
    data: bytes
    source_url: str | None
    ext: str = "png"


class SourceAdapter(Protocol):
    def fetch(self, class_spec: ClassSpec, limit: int) -> Iterator[RawImage]: ...


class MemorySource:
    """Serves a fixed list of encoded images for every class (test double)."""

    def __init__(self, images: Sequence[bytes], ext: str = "png"):
        self.images = list(images)
        self.ext = ext

    def fetch(self, class_spec, limit):
        for i, data in enumerate(self.images):
            yield RawImage(data, f"memory://{class_spec.class_id}/{i}", self.ext)


class LocalDirectorySource:
    """Reads ``<root>/<class_id>/*`` image files in sorted order."""

    def __init__(self, root: str | Path):
        self.root = Path(root)

    def fetch(self, class_spec, limit):
        folder = self.root / class_spec.class_id
        if not folder.is_dir():
            raise SourceUnavailable(f"no directory for class {class_spec.class_id} under {self.root}")
        for path in sorted(folder.iterdir()):
            if path.suffix.lower() in IMAGE_SUFFIXES:
                yield RawImage(path.read_bytes(), path.resolve().as_uri(), path.suffix.lower().lstrip("."))


class HttpSource:
    """Fetches ``index_url`` (one image URL per line) for a class, then each image.

    ``index_url`` is a template with a ``{class_id}`` field. Requests are spaced
    by ``1 / rate_limit`` seconds across threads and retried with exponential
    backoff.
    """

    def __init__(self, index_url: str, rate_limit: float = 2.0, retries: int = 3,
                 timeout: float = 10.0, backoff: float = 0.5):
        self.index_url = index_url
        self.min_interval = 1.0 / rate_limit if rate_limit > 0 else 0.0
        self.retries = retries
        self.timeout = timeout
        self.backoff = backoff
        self._lock = threading.Lock()
        self._next_slot = 0.0

    def _wait_turn(self):
        with self._lock:
            now = time.monotonic()
            slot = max(now, self._next_slot)
            self._next_slot = slot + self.min_interval
        if slot > now:
            time.sleep(slot - now)

    def _get(self, url: str) -> bytes:
        last = None
        for attempt in range(self.retries + 1):
            self._wait_turn()
            try:
                with urllib.request.urlopen(url, timeout=self.timeout) as resp:
                    return resp.read()
            except (urllib.error.URLError, OSError) as exc:
                last = exc
                if attempt < self.retries:
                    time.sleep(self.backoff * 2 ** attempt)
        raise SourceUnavailable(f"{url}: {last}")

    def fetch(self, class_spec, limit):
        listing = self._get(self.index_url.format(class_id=class_spec.class_id)).decode()
        urls = [u.strip() for u in listing.splitlines() if u.strip() and not u.startswith("#")]
        failures = 0
        for url in urls:
            try:
                data = self._get(url)
            except SourceUnavailable as exc:
                failures += 1
                log.warning("skipping %s", exc)
                continue
            ext = Path(urllib.request.urlparse(url).path).suffix.lstrip(".").lower() or "jpg"
            yield RawImage(data, url, ext)
        if urls and failures == len(urls):
            raise SourceUnavailable(f"all {failures} image fetches failed for {class_spec.class_id}")


# Synthetic world -----------------------------------------------------------

@dataclass(frozen=True)
class Concept:
    """Appearance parameters of one synthetic class, derived from its class_id."""

    orientation: float
    frequency: float
    color: tuple[float, float, float]
    second_orientation: float
    second_frequency: float


def concept_for(class_id: str) -> Concept:
    rng = np.random.default_rng(int.from_bytes(hashlib.sha256(class_id.encode()).digest()[:8], "little"))
    color = rng.normal(size=3)
    color = color / np.linalg.norm(color)
    return Concept(
        orientation=float(rng.uniform(0, np.pi)),
        frequency=float(rng.uniform(1.5, 5.0)),
        color=tuple(float(c) for c in color),
        second_orientation=float(rng.uniform(0, np.pi)),
        second_frequency=float(rng.uniform(1.5, 5.0)),
    )


def render_synthetic(concept: Concept, rng: np.random.Generator, resolution: int,
                     amplitude: float = 0.18, noise: float = 0.08) -> np.ndarray:
    """One (3, R, R) image in [0,1]: two jittered oriented gratings plus noise.

    Mean brightness and per-channel offsets are random per image, so class
    identity lives in the texture rather than in the average colour.
    """
    v, u = np.mgrid[0:resolution, 0:resolution] / resolution
    img = np.full((3, resolution, resolution), 0.5)
    img += rng.uniform(-0.08, 0.08) + rng.uniform(-0.1, 0.1, size=(3, 1, 1))
    color = np.asarray(concept.color) + rng.normal(scale=0.25, size=3)
    for theta, freq, weight in ((concept.orientation, concept.frequency, 1.0),
                                (concept.second_orientation, concept.second_frequency, 0.6)):
        theta = theta + rng.normal(scale=0.12)
        freq = freq * rng.uniform(0.85, 1.15)
        phase = rng.uniform(0, 2 * np.pi)
        wave = np.cos(2 * np.pi * freq * (u * np.cos(theta) + v * np.sin(theta)) + phase)
        img += weight * amplitude * rng.uniform(0.6, 1.0) * color[:, None, None] * wave[None]
    img += rng.normal(scale=noise, size=img.shape)
    return np.clip(img, 0.0, 1.0)


def encode_png(pixels: np.ndarray) -> bytes:
    arr = np.round(np.clip(pixels, 0, 1) * 255).astype(np.uint8).transpose(1, 2, 0)
    buf = io.BytesIO()
    Image.fromarray(arr, "RGB").save(buf, format="PNG")
    return buf.getvalue()


class SyntheticSource:
    """Procedural class-conditional images.

    The class appearance depends only on the class_id, so two sources with
    different ``stream`` values sample disjoint images of the same classes.
    ``duplicate_every=k`` makes every k-th image a byte copy of its predecessor.
    """

    def __init__(self, n_images: int, resolution: int = 32, stream: str = "attacker",
                 amplitude: float = 0.18, noise: float = 0.08, duplicate_every: int | None = None,
                 renderer: Callable[..., np.ndarray] = render_synthetic):
        self.n_images = n_images
        self.resolution = resolution
        self.stream = stream
        self.amplitude = amplitude
        self.noise = noise
        self.duplicate_every = duplicate_every
        self.renderer = renderer

    def fetch(self, class_spec, limit):
        concept = concept_for(class_spec.class_id)
        key = hashlib.sha256(f"{self.stream}/{class_spec.class_id}".encode()).digest()
        rng = np.random.default_rng(int.from_bytes(key[:8], "little"))
        prev = None
        for i in range(self.n_images):
            if self.duplicate_every and prev is not None and i % self.duplicate_every == 0:
                data = prev
            else:
                data = encode_png(self.renderer(concept, rng, self.resolution, self.amplitude, self.noise))
            prev = data
            yield RawImage(data, f"synthetic://{self.stream}/{class_spec.class_id}/{i}", "png")
