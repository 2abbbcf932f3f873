from __future__ import annotations

import subprocess
import threading
import urllib.request
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import torch

from purebox.transfer import wire
from purebox.zoo.handle import ClassifierHandle


@dataclass
class TargetOracle:
    """Hard-label access to a target model.

    ``label_fn`` maps one (3, H, W) image to a class index. ``batch_fn``, when
    present, labels a whole (N, 3, H, W) batch at once. ``max_in_flight``
    bounds concurrent queries (external services usually want 1).
    """

    kind: str
    label_fn: Callable[[np.ndarray], int]
    metadata: dict = field(default_factory=dict)
    batch_fn: Callable[[torch.Tensor], np.ndarray] | None = None
    max_in_flight: int = 1

    def __post_init__(self):
        if self.kind not in ("local_model", "external_callable"):
            raise ValueError(f"unknown oracle kind {self.kind!r}")
        self._slots = threading.BoundedSemaphore(max(1, self.max_in_flight))

    @property
    def num_classes(self) -> int | None:
        return self.metadata.get("num_classes")

    def __call__(self, image) -> int:
        if isinstance(image, torch.Tensor):
            image = image.detach().numpy()
        with self._slots:
            return int(self.label_fn(np.asarray(image, dtype=np.float32)))

    def labels(self, images) -> np.ndarray:
        images = torch.as_tensor(images, dtype=torch.float32)
        if self.batch_fn is not None:
            with self._slots:
                return np.asarray(self.batch_fn(images), dtype=np.int64)
        return np.array([self(img) for img in images], dtype=np.int64)

    @classmethod
    def from_classifier(cls, handle: ClassifierHandle, name: str = "") -> "TargetOracle":
        meta = {"num_classes": handle.num_classes, "class_map": list(handle.class_map), "name": name}
        return cls(
            kind="local_model",
            label_fn=lambda x: int(handle.predict(torch.from_numpy(np.asarray(x, dtype=np.float32)))),
            batch_fn=lambda xs: handle.predict(xs).numpy(),
            metadata=meta,
            max_in_flight=64,
        )

    @classmethod
    def external(cls, label_fn: Callable[[np.ndarray], int], num_classes: int | None = None,
                 class_map: Sequence[str] | None = None, max_in_flight: int = 1) -> "TargetOracle":
        meta = {"num_classes": num_classes}
        if class_map is not None:
            meta["class_map"] = list(class_map)
        return cls(kind="external_callable", label_fn=label_fn, metadata=meta, max_in_flight=max_in_flight)


class SubprocessOracle:
    """Talks to a long-running child process over stdin/stdout using the wire format."""

    def __init__(self, command: Sequence[str]):
        self.command = list(command)
        self._proc = subprocess.Popen(self.command, stdin=subprocess.PIPE, stdout=subprocess.PIPE)
        self._lock = threading.Lock()

    def __call__(self, image: np.ndarray) -> int:
        with self._lock:
            self._proc.stdin.write(wire.encode_request(image))
            self._proc.stdin.flush()
            line = self._proc.stdout.readline()
        if not line:
            raise RuntimeError(f"oracle process {self.command[0]} exited (code {self._proc.poll()})")
        return wire.decode_response(line)

    def close(self):
        if self._proc.poll() is None:
            self._proc.stdin.close()
            self._proc.wait(timeout=10)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class HttpOracle:
    """POSTs wire-format requests to ``url``."""

    def __init__(self, url: str, timeout: float = 30.0):
        self.url = url
        self.timeout = timeout

    def __call__(self, image: np.ndarray) -> int:
        req = urllib.request.Request(self.url, data=wire.encode_request(image), method="POST",
                                     headers={"Content-Type": "application/octet-stream"})
        with urllib.request.urlopen(req, timeout=self.timeout) as resp:
            return wire.decode_response(resp.read())
