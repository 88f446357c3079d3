"""Operation and traffic counters.

``OpCounter`` tallies decomposition, combination and bmma-quantum work;
``counting()`` installs a fresh one for the current context.
``TrafficCounter`` models main-memory and staging traffic in bits.
"""

from __future__ import annotations

import contextlib
import contextvars
from dataclasses import dataclass, field

TILE_MACS = 8 * 8 * 128


@dataclass
class OpCounter:
    decompose: int = 0
    combine: int = 0
    bmma_tiles: int = 0

    @property
    def bit_macs(self) -> int:
        return self.bmma_tiles * TILE_MACS

    @property
    def overhead_ratio(self) -> float:
        """(decompose + combine) / binary multiply-accumulates."""
        return (self.decompose + self.combine) / self.bit_macs if self.bmma_tiles else float("inf")


_current: contextvars.ContextVar[OpCounter | None] = contextvars.ContextVar("apbit_ops", default=None)


@contextlib.contextmanager
def counting():
    counter = OpCounter()
    token = _current.set(counter)
    try:
        yield counter
    finally:
        _current.reset(token)


def record(decompose: int = 0, combine: int = 0, bmma_tiles: int = 0) -> None:
    counter = _current.get()
    if counter is not None:
        counter.decompose += decompose
        counter.combine += combine
        counter.bmma_tiles += bmma_tiles


@dataclass
class TrafficCounter:
    """Monotone traffic tallies in bits.

    Staging fills are read from main memory, so ``stage`` bumps both
    ``staged_bits`` and ``read_main_bits``.  ``events`` keeps one
    ``(kind, label, bits)`` entry per main-memory write.
    """

    read_main_bits: int = 0
    written_main_bits: int = 0
    staged_bits: int = 0
    events: list[tuple[str, str, int]] = field(default_factory=list)

    def stage(self, bits: int) -> None:
        self.staged_bits += bits
        self.read_main_bits += bits

    def read(self, bits: int) -> None:
        self.read_main_bits += bits

    def write(self, bits: int, kind: str, label: str = "") -> None:
        self.written_main_bits += bits
        self.events.append((kind, label, bits))

    def merge(self, other: "TrafficCounter") -> None:
        self.read_main_bits += other.read_main_bits
        self.written_main_bits += other.written_main_bits
        self.staged_bits += other.staged_bits
        self.events.extend(other.events)

    def reset(self) -> None:
        self.read_main_bits = self.written_main_bits = self.staged_bits = 0
        self.events.clear()

    @property
    def bytes_read_main(self) -> float:
        return self.read_main_bits / 8

    @property
    def bytes_written_main(self) -> float:
        return self.written_main_bits / 8

    @property
    def bytes_staged(self) -> float:
        return self.staged_bits / 8

    @property
    def main_bits(self) -> int:
        return self.read_main_bits + self.written_main_bits
