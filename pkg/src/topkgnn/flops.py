"""Multiply-add accounting shared by the dense and sparse kernels.

Kernels call :func:`record`; nothing is counted unless a counter is active::

    with count_flops() as fc, flop_tag("bwd_spmm/l0"):
        spmm(a, b)
    fc.counts["bwd_spmm/l0"]
"""

from __future__ import annotations

from collections import defaultdict
from contextlib import contextmanager
from typing import Iterator

_active: list["FlopCounter"] = []
_tags: list[str] = []


class FlopCounter:
    def __init__(self) -> None:
        self.counts: dict[str, int] = defaultdict(int)

    def add(self, tag: str, n: int) -> None:
        self.counts[tag] += int(n)

    def total(self, prefix: str = "") -> int:
        return sum(v for k, v in self.counts.items() if k.startswith(prefix))

    def reset(self) -> None:
        self.counts.clear()


def record(n: int) -> None:
    if not _active:
        return
    tag = _tags[-1] if _tags else "untagged"
    for counter in _active:
        counter.add(tag, n)


@contextmanager
def count_flops(counter: FlopCounter | None = None) -> Iterator[FlopCounter]:
    counter = FlopCounter() if counter is None else counter
    _active.append(counter)
    try:
        yield counter
    finally:
        _active.remove(counter)


@contextmanager
def flop_tag(tag: str) -> Iterator[None]:
    _tags.append(tag)
    try:
        yield
    finally:
        _tags.pop()
