"""Planners that carve a long token stream into trainable windows.

Two planners: overlapping windows that advance by a fixed stride smaller
than the window (every boundary is then interior to some window), and
plain disjoint chunks, the order-losing baseline. Plus the head+tail
truncation that squeezes a long input into a prompt budget.

All indices are 0-based, ranges half-open [start, end).
"""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class SegmentationPlan:
    """Ordered half-open ranges covering [0, length)."""
    ranges: tuple[tuple[int, int], ...]
    seg_len: int
    stride: int

    def __post_init__(self):
        if not self.ranges:
            raise ValueError("a plan needs at least one range")
        prev_start = -1
        for start, end in self.ranges:
            if end <= start:
                raise ValueError(f"empty or inverted range ({start}, {end})")
            if start <= prev_start:
                raise ValueError("range starts must be strictly increasing")
            prev_start = start
        if self.ranges[0][0] != 0:
            raise ValueError("the first range must start at 0")

    @property
    def segment_count(self) -> int:
        return len(self.ranges)

    @property
    def length(self) -> int:
        return self.ranges[-1][1]

    def total_tokens(self) -> int:
        """Tokens covered counting overlaps multiply (one epoch's exposure)."""
        return sum(end - start for start, end in self.ranges)


def default_stride(seg_len: int) -> int:
    """floor(3/8 of the segment length), the stride that keeps every
    boundary crossed while costing only a constant factor of extra tokens."""
    return 3 * seg_len // 8


def plan_overlap(length: int, seg_len: int, stride: int) -> SegmentationPlan:
    """Minimal chain of overlapping windows covering [0, length).

    Interior windows have length exactly seg_len and starts 0, stride,
    2*stride, ...; the final window ends at length and keeps length in
    (seg_len - stride, seg_len]. The count is minimal: one window fewer
    would leave a tail longer than seg_len.
    """
    if length < 1:
        raise ValueError("length must be positive")
    if seg_len < 2:
        raise ValueError("seg_len must be at least 2")
    if stride < 1:
        raise ValueError("stride must be positive")
    if stride >= seg_len:
        raise ValueError("stride must be smaller than seg_len "
                         "(use plan_trivial for disjoint chunks)")
    if length <= seg_len:
        return SegmentationPlan(((0, length),), seg_len, stride)
    k = math.ceil((length - seg_len) / stride) + 1
    ranges = [(i * stride, i * stride + seg_len) for i in range(k - 1)]
    ranges.append(((k - 1) * stride, length))
    final_len = length - (k - 1) * stride
    assert seg_len - stride < final_len <= seg_len
    return SegmentationPlan(tuple(ranges), seg_len, stride)


def plan_trivial(length: int, seg_len: int) -> SegmentationPlan:
    """Disjoint chunks [0,l), [l,2l), ...; the last may be short."""
    if length < 1:
        raise ValueError("length must be positive")
    if seg_len < 1:
        raise ValueError("seg_len must be positive")
    ranges = tuple((start, min(start + seg_len, length))
                   for start in range(0, length, seg_len))
    return SegmentationPlan(ranges, seg_len, seg_len)


def extract(tokens, plan: SegmentationPlan) -> list[list[int]]:
    """Materialize the plan's windows from the token stream."""
    tokens = list(tokens)
    if plan.length != len(tokens):
        raise ValueError(f"plan covers {plan.length} tokens but stream has {len(tokens)}")
    return [tokens[start:end] for start, end in plan.ranges]


def truncate_icl(tokens, budget: int, head_fraction: float = 0.5) -> list[int]:
    """Keep the head and tail of an over-budget stream, dropping the middle.

    head = round(head_fraction * budget) tokens from the front, the rest
    from the back. Inputs within budget pass through unchanged.
    """
    if not 0.0 <= head_fraction <= 1.0:
        raise ValueError("head_fraction must lie in [0, 1]")
    tokens = list(tokens)
    n = len(tokens)
    if n <= budget:
        return tokens
    if budget < 2:
        raise ValueError("budget must be at least 2 when truncation is needed")
    head = int(math.floor(head_fraction * budget + 0.5))
    tail = budget - head
    return tokens[:head] + tokens[n - tail:]
