from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from purebox.errors import OutOfRange


@dataclass(frozen=True)
class ClassSpec:
    class_id: str
    display_name: str
    rank: int


_CANONICAL = [
    ("n04467665", "Trailer truck"),
    ("n04389033", "Tank"),
    ("n03977966", "Police van"),
    ("n03763968", "Military uniform"),
    ("n02480855", "Gorilla"),
    ("n01882714", "Koala"),
    ("n02687172", "Aircraft carrier"),
    ("n02749479", "Assault rifle"),
    ("n02950826", "Cannon"),
    ("n04347754", "Submarine"),
    ("n04552348", "Warplane"),
    ("n02106662", "German shepherd"),
    ("n01518878", "Ostrich"),
    ("n02123159", "Tiger cat"),
    ("n01318894", "Pet"),
    ("n01537134", "Bunting"),
    ("n01322898", "Lion cub"),
    ("n00464478", "Water polo"),
    ("n00449796", "Hydroplane racing"),
    ("n00021265", "Food"),
    ("n01504179", "Fledgling"),
    ("n01514668", "Cock"),
    ("n00471437", "Ball game"),
    ("n00451186", "Cross Country Riding"),
    ("n01503061", "Bird"),
]

CANONICAL_CLASSES: list[ClassSpec] = [
    ClassSpec(cid, name, rank) for rank, (cid, name) in enumerate(_CANONICAL, start=1)
]

# generators are trained and transfer is evaluated on this prefix only
GENERATOR_CLASS_COUNT = 6


def validate_class_list(class_list: Sequence[ClassSpec]) -> None:
    ids = [c.class_id for c in class_list]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate class_id in class list")
    ranks = sorted(c.rank for c in class_list)
    if ranks != list(range(1, len(class_list) + 1)):
        raise ValueError("class ranks must form a contiguous 1..N sequence")


def select_class_subset(class_list: Sequence[ClassSpec], k: int) -> list[ClassSpec]:
    """First ``k`` classes by rank. Position in the returned list is the training label."""
    if not 1 <= k <= len(class_list):
        raise OutOfRange(f"k={k} outside 1..{len(class_list)}")
    return sorted(class_list, key=lambda c: c.rank)[:k]


def label_map(subset: Sequence[ClassSpec]) -> dict[str, int]:
    return {c.class_id: i for i, c in enumerate(subset)}


def classes_by_id(class_ids: Sequence[str], class_list: Sequence[ClassSpec] = CANONICAL_CLASSES) -> list[ClassSpec]:
    index = {c.class_id: c for c in class_list}
    missing = [cid for cid in class_ids if cid not in index]
    if missing:
        raise KeyError(f"unknown class ids: {missing}")
    return [index[cid] for cid in class_ids]
