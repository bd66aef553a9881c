"""Keyed random streams.

Every random draw in the package comes from an :class:`RngStream` whose key
fully determines its output. Parallel workers therefore reproduce the same
draws as a sequential run, as long as each work item derives its own key.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, replace

import numpy as np


@dataclass(frozen=True)
class RngStream:
    global_seed: int
    purpose_tag: str = ""
    phase: int = 0
    item_id: int = 0
    draw_counter: int = 0

    def _entropy(self) -> list[int]:
        tag = zlib.crc32(self.purpose_tag.encode("utf-8"))
        return [
            self.global_seed & 0xFFFFFFFFFFFFFFFF,
            tag,
            self.phase & 0xFFFFFFFF,
            self.item_id & 0xFFFFFFFF,
            self.draw_counter & 0xFFFFFFFF,
        ]

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(np.random.SeedSequence(self._entropy())))

    def child(self, purpose_tag: str | None = None, *, phase: int | None = None,
              item_id: int | None = None, draw_counter: int | None = None) -> "RngStream":
        changes = {}
        if purpose_tag is not None:
            changes["purpose_tag"] = purpose_tag
        if phase is not None:
            changes["phase"] = phase
        if item_id is not None:
            changes["item_id"] = item_id
        if draw_counter is not None:
            changes["draw_counter"] = draw_counter
        return replace(self, **changes)

    def draw(self, n: int) -> "RngStream":
        return replace(self, draw_counter=n)
