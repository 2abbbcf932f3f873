from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Hashable

from purebox.corpus.dataset import ImageSample
from purebox.errors import NoBoundaryFound, QueryBudgetExhausted
from purebox.blendquery.blend import BlendConfig


class QueryLedger:
    """Thread-safe count of target-model queries, optionally capped."""

    def __init__(self, budget_cap: int | None = None):
        self.budget_cap = budget_cap
        self.per_sample: dict[Hashable, int] = {}
        self._total = 0
        self._lock = threading.Lock()

    @property
    def total_queries(self) -> int:
        return self._total

    @property
    def remaining(self) -> int | None:
        return None if self.budget_cap is None else self.budget_cap - self._total

    def charge(self, sample_id: Hashable, n: int = 1) -> None:
        with self._lock:
            if self.budget_cap is not None and self._total + n > self.budget_cap:
                raise QueryBudgetExhausted(f"query cap {self.budget_cap} reached")
            self._total += n
            self.per_sample[sample_id] = self.per_sample.get(sample_id, 0) + n

    def consistent(self) -> bool:
        return self._total == sum(self.per_sample.values()) and (
            self.budget_cap is None or self._total <= self.budget_cap)

    def to_dict(self) -> dict:
        return {"total_queries": self._total, "budget_cap": self.budget_cap,
                "per_sample": {str(k): v for k, v in self.per_sample.items()}}


@dataclass
class BoundaryPair:
    inside_image: ImageSample
    outside_image: ImageSample
    inside_param: float
    outside_param: float
    tm_labels: tuple[int, int]
    queries_used: int
    capped: bool = False  # recursion cap hit before the tolerance was met

    @property
    def width(self) -> float:
        return self.outside_param - self.inside_param


@dataclass
class _Bracket:
    lo: float
    hi: float
    lo_image: ImageSample | None = None
    hi_image: ImageSample | None = None
    hi_label: int | None = None
    queries: int = 0
    extra: dict = field(default_factory=dict)


def _to_pair(b: _Bracket, source_label: int, cfg: BlendConfig) -> BoundaryPair:
    tol = cfg.norm_tolerance * cfg.search_range
    return BoundaryPair(b.lo_image, b.hi_image, b.lo, b.hi, (source_label, b.hi_label), b.queries,
                        capped=(b.hi - b.lo) > tol)


def boundary_search(param_to_image: Callable[[float], ImageSample], tm, source_label: int | None,
                    cfg: BlendConfig, ledger: QueryLedger, sample_id: Hashable = 0) -> BoundaryPair:
    """Bisect the blend parameter until the target's label flip is bracketed.

    ``tm`` is any callable image -> label. One query checks the unmodified
    source, one the far end (``cfg.search_range``), then one per bisection, at
    most ``cfg.max_recursions`` of them. ``source_label=None`` adopts the
    target's label of the source.
    """
    eps0 = cfg.search_range
    b = _Bracket(0.0, eps0)

    def query(image):
        try:
            ledger.charge(sample_id)
        except QueryBudgetExhausted as exc:
            partial = _to_pair(b, source_label, cfg) if b.hi_label is not None else None
            raise QueryBudgetExhausted(str(exc), partial) from None
        b.queries += 1
        return int(tm(image.pixels))

    b.lo_image = param_to_image(0.0)
    first = query(b.lo_image)
    if source_label is None:
        source_label = first
    elif first != source_label:
        raise NoBoundaryFound(f"target labels the source {first}, expected {source_label}", b.queries)
    b.hi_image = param_to_image(eps0)
    far = query(b.hi_image)
    if far == source_label:
        raise NoBoundaryFound(f"label {source_label} survives the full blend range {eps0:.4f}", b.queries)
    b.hi_label = far
    tol = cfg.norm_tolerance * eps0
    for _ in range(cfg.max_recursions):
        if cfg.early_exit and b.hi - b.lo <= tol:
            break
        mid = 0.5 * (b.lo + b.hi)
        image = param_to_image(mid)
        label = query(image)
        if label == source_label:
            b.lo, b.lo_image = mid, image
        else:
            b.hi, b.hi_image, b.hi_label = mid, image, label
    return _to_pair(b, source_label, cfg)


def linear_sweep_search(param_to_image: Callable[[float], ImageSample], tm, source_label: int | None,
                        ledger: QueryLedger, resolution: float = 0.05, search_range: float = 1.0,
                        sample_id: Hashable = 0) -> BoundaryPair:
    """Query every grid point of the blend range (the exhaustive baseline bisection replaces)."""
    steps = int(round(search_range / resolution))
    grid = [search_range * i / steps for i in range(steps + 1)]
    images, labels = [], []
    for t in grid:
        ledger.charge(sample_id)
        images.append(param_to_image(t))
        labels.append(int(tm(images[-1].pixels)))
    if source_label is None:
        source_label = labels[0]
    for i in range(1, len(grid)):
        if labels[i - 1] == source_label and labels[i] != source_label:
            return BoundaryPair(images[i - 1], images[i], grid[i - 1], grid[i], (source_label, labels[i]),
                                len(grid), capped=False)
    raise NoBoundaryFound("no label flip along the sweep", len(grid))
