from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from purebox.corpus.classes import ClassSpec
from purebox.errors import InsufficientData, UnknownHash

SPLITS = ("train", "val", "eval")


def content_hash(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


@dataclass(frozen=True)
class ManifestEntry:
    content_hash: str
    source_url: str | None
    class_id: str
    split: str = "eval"
    curated: bool = False

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ValueError(f"unknown split {self.split!r}")


@dataclass
class Manifest:
    entries: list[ManifestEntry] = field(default_factory=list)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def hashes(self) -> set[str]:
        return {e.content_hash for e in self.entries}

    def extend(self, entries: Iterable[ManifestEntry]) -> int:
        """Append entries whose hash is not yet present; returns the number added."""
        seen = self.hashes
        added = 0
        for e in entries:
            if e.content_hash in seen:
                continue
            seen.add(e.content_hash)
            self.entries.append(e)
            added += 1
        return added

    def by_class(self) -> dict[str, list[ManifestEntry]]:
        out: dict[str, list[ManifestEntry]] = {}
        for e in self.entries:
            out.setdefault(e.class_id, []).append(e)
        return out

    def select(self, split: str | None = None, class_ids: Iterable[str] | None = None) -> list[ManifestEntry]:
        wanted = set(class_ids) if class_ids is not None else None
        return [
            e for e in self.entries
            if (split is None or e.split == split) and (wanted is None or e.class_id in wanted)
        ]

    def counts(self) -> dict[str, dict[str, int]]:
        out: dict[str, dict[str, int]] = {}
        for e in self.entries:
            out.setdefault(e.class_id, {s: 0 for s in SPLITS})[e.split] += 1
        return out

    def validate(self, class_list: Sequence[ClassSpec] | None = None) -> None:
        hashes = [e.content_hash for e in self.entries]
        if len(set(hashes)) != len(hashes):
            raise ValueError("duplicate content_hash in manifest")
        if class_list is not None:
            known = {c.class_id for c in class_list}
            bad = sorted({e.class_id for e in self.entries} - known)
            if bad:
                raise ValueError(f"manifest references unknown classes: {bad}")

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()

    def to_json(self) -> str:
        return json.dumps({"entries": [asdict(e) for e in self.entries]}, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Manifest":
        raw = json.loads(text)
        return cls([ManifestEntry(**e) for e in raw["entries"]])

    def save(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_json())

    @classmethod
    def load(cls, path: str | Path) -> "Manifest":
        return cls.from_json(Path(path).read_text())


def curate(manifest: Manifest, verdicts: Mapping[str, bool]) -> Manifest:
    """Drop entries judged irrelevant and mark the kept ones curated.

    Entries without a verdict pass through untouched.
    """
    known = manifest.hashes
    unknown = [h for h in verdicts if h not in known]
    if unknown:
        raise UnknownHash(f"{len(unknown)} verdict(s) reference unknown hashes, e.g. {unknown[0]}")
    out = []
    for e in manifest.entries:
        if e.content_hash not in verdicts:
            out.append(e)
        elif verdicts[e.content_hash]:
            out.append(replace(e, curated=True))
    return Manifest(out)


def accept_all(manifest: Manifest) -> dict[str, bool]:
    return {e.content_hash: True for e in manifest.entries}


_TRUTHY = {"1", "true", "yes", "y", "keep", "t"}
_FALSY = {"0", "false", "no", "n", "drop", "f"}


def load_verdicts(path: str | Path) -> dict[str, bool]:
    """Read a two-column ``hash,keep`` CSV. A header row is tolerated."""
    verdicts = {}
    with open(path, newline="") as fh:
        for i, row in enumerate(csv.reader(fh)):
            if not row or row[0].startswith("#"):
                continue
            h, keep = row[0].strip(), row[1].strip().lower()
            if i == 0 and h.lower() in ("hash", "content_hash"):
                continue
            if keep in _TRUTHY:
                verdicts[h] = True
            elif keep in _FALSY:
                verdicts[h] = False
            else:
                raise ValueError(f"{path}:{i + 1}: cannot parse keep value {row[1]!r}")
    return verdicts


def save_verdicts(verdicts: Mapping[str, bool], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["hash", "keep"])
        for h, keep in sorted(verdicts.items()):
            w.writerow([h, "1" if keep else "0"])


def _class_rng(seed: int, class_id: str) -> np.random.Generator:
    salt = int.from_bytes(hashlib.sha256(class_id.encode()).digest()[:8], "little")
    return np.random.default_rng([seed, salt])


def split_dataset(manifest: Manifest, per_class_train: int, per_class_val: int, seed: int) -> Manifest:
    """Seeded per-class train/val draw among curated entries; everything else becomes eval."""
    if per_class_train < 0 or per_class_val < 0:
        raise ValueError("quotas must be non-negative")
    need = per_class_train + per_class_val
    assigned: dict[str, str] = {}
    for class_id, entries in sorted(manifest.by_class().items()):
        pool = sorted((e for e in entries if e.curated), key=lambda e: e.content_hash)
        if len(pool) < need:
            raise InsufficientData(class_id, len(pool), need)
        order = _class_rng(seed, class_id).permutation(len(pool))
        for rank, idx in enumerate(order):
            if rank < per_class_train:
                assigned[pool[idx].content_hash] = "train"
            elif rank < need:
                assigned[pool[idx].content_hash] = "val"
    return Manifest([replace(e, split=assigned.get(e.content_hash, "eval")) for e in manifest.entries])
