"""Parser for the hierarchical marker-block structure of a ±1 window.

A scale-k marker end is a position whose trailing ``ell_k`` cells spell the
scale-k marker word (``ell_k - 1`` plus-ones, one minus-one). Consecutive
ends delimit scale-k blocks. The position just before the window's oldest
cell counts as a marker end at every scale (the wall convention), so every
window parses completely: oldest block wall-truncated, newest block partial.

Because marker words nest (a scale-k end is a scale-j end for every j < k),
block boundaries at a coarser scale are always boundaries at every finer
scale; the recursive structure below leans on that.

The WindowIndex keeps one sorted end list per scale plus a movable wall.
When the wall advances past the +1 run feeding a marker, that marker stops
counting at scales whose word no longer fits; head pointers demote such
ends lazily, so a sliding window never rescans.
"""

from __future__ import annotations

import enum
import math
from bisect import bisect_left, bisect_right
from dataclasses import dataclass

import numpy as np

from .params import ScaleTable


class ScaleOutOfRange(ValueError):
    pass


class WindowTooShort(ValueError):
    pass


class BlockKind(enum.Enum):
    COMPLETE = "Complete"
    PARTIAL = "Partial"
    WALL_TRUNCATED = "WallTruncated"


@dataclass(frozen=True)
class Block:
    """Half-open interval [a, b) of a scale-k block."""

    k: int
    a: int
    b: int
    kind: BlockKind

    def __len__(self) -> int:
        return self.b - self.a


@dataclass(frozen=True)
class OpeningSet:
    """Positions of a block that stay eligible for the voting set.

    Stored as disjoint half-open strips; every strip lies inside the
    block's beginning at the base scale.
    """

    block: Block
    strips: tuple[tuple[int, int], ...]

    @property
    def size(self) -> int:
        return sum(e - s for s, e in self.strips)

    def positions(self) -> np.ndarray:
        if not self.strips:
            return np.empty(0, dtype=np.int64)
        return np.concatenate([np.arange(s, e, dtype=np.int64) for s, e in self.strips])


@dataclass(frozen=True)
class K0Result:
    k0: int
    capped: bool


def _as_row(y_row) -> np.ndarray:
    y = np.asarray(y_row, dtype=np.int8)
    if y.ndim != 1:
        raise ValueError("window row must be one-dimensional")
    return y


class WindowIndex:
    """Marker ends of one ±1 row, per scale, under a movable wall.

    Positions are absolute integers; the row covers
    [start, start + n). ``wall`` is the oldest visible position; queries
    never look older than it, and markers whose word would poke past it
    are demoted on the fly.
    """

    __slots__ = ("table", "start", "t_now", "wall", "ends", "heads", "trailing_run")

    def __init__(self, table: ScaleTable, start: int, t_now: int, wall: int,
                 ends: dict[int, list[int]], trailing_run: int):
        self.table = table
        self.start = start
        self.t_now = t_now
        self.wall = wall
        self.ends = ends
        self.heads = {k: 0 for k in ends}
        self.trailing_run = trailing_run

    @classmethod
    def scan(cls, y_row, table: ScaleTable, start: int) -> "WindowIndex":
        y = _as_row(y_row)
        n = len(y)
        if n == 0:
            raise WindowTooShort("cannot index an empty window")
        minus = np.flatnonzero(y == -1)
        K, k_max = table.K, table.k_max
        ends: dict[int, list[int]] = {}
        if len(minus):
            prev = np.empty_like(minus)
            prev[0] = -1
            prev[1:] = minus[:-1]
            runs = minus - prev - 1
            for k in range(K, k_max + 1):
                sel = runs >= table.ell[k] - 1
                ends[k] = (minus[sel] + start).tolist()
            trailing_run = int(n - 1 - minus[-1])
        else:
            for k in range(K, k_max + 1):
                ends[k] = []
            trailing_run = n
        return cls(table, start, start + n - 1, start, ends, trailing_run)

    def append(self, y_val: int) -> None:
        """Extend the row by one cell at the newest edge."""
        self.push(y_val)

    def push(self, y_val: int) -> tuple[int, int, int]:
        """Append one cell and return an undo token for `undo`."""
        prev_run = self.trailing_run
        pos = self.t_now + 1
        touched = 0
        if y_val == 1:
            self.trailing_run += 1
        else:
            run = self.trailing_run
            table = self.table
            for k in range(table.K, table.k_max + 1):
                if run >= table.ell[k] - 1:
                    self.ends[k].append(pos)
                    touched += 1
                else:
                    break
            self.trailing_run = 0
        self.t_now = pos
        return (y_val, prev_run, touched)

    def undo(self, token: tuple[int, int, int]) -> None:
        """Reverse the matching `push` (last-in-first-out only)."""
        y_val, prev_run, touched = token
        if y_val != 1:
            K = self.table.K
            for k in range(K, K + touched):
                self.ends[k].pop()
                if self.heads[k] > len(self.ends[k]):
                    self.heads[k] = len(self.ends[k])
        self.trailing_run = prev_run
        self.t_now -= 1

    def copy(self) -> "WindowIndex":
        dup = WindowIndex(self.table, self.start, self.t_now, self.wall,
                          {k: list(v) for k, v in self.ends.items()}, self.trailing_run)
        dup.heads = dict(self.heads)
        return dup

    def _check_scale(self, k: int) -> None:
        if k < self.table.K or k > self.table.k_max:
            raise ScaleOutOfRange(f"scale {k} outside the block range [{self.table.K}, {self.table.k_max}]")

    def _valid(self, k: int) -> tuple[list[int], int]:
        lst = self.ends[k]
        head = self.heads[k]
        floor = self.wall + self.table.ell[k] - 1
        while head < len(lst) and lst[head] < floor:
            head += 1
        self.heads[k] = head
        return lst, head

    def last_end_at_or_before(self, k: int, t: int) -> int | None:
        lst, head = self._valid(k)
        i = bisect_right(lst, t) - 1
        return lst[i] if i >= head else None

    def ends_in(self, k: int, lo: int, hi: int) -> list[int]:
        """Valid scale-k ends in (lo, hi]."""
        lst, head = self._valid(k)
        i = max(head, bisect_right(lst, lo))
        j = bisect_right(lst, hi)
        return lst[i:j]

    def count_ends_in(self, k: int, lo: int, hi: int, stop_after: int | None = None) -> int:
        lst, head = self._valid(k)
        i = max(head, bisect_right(lst, lo))
        j = bisect_right(lst, hi)
        n = j - i
        if stop_after is not None and n > stop_after:
            return stop_after + 1
        return n

    def block_of(self, k: int, t: int) -> Block:
        self._check_scale(k)
        if not (self.wall <= t <= self.t_now):
            raise ValueError(f"position {t} outside the visible window [{self.wall}, {self.t_now}]")
        a = self.last_end_at_or_before(k, t)
        if a is None:
            a, from_wall = self.wall, True
        else:
            from_wall = False
        lst, head = self._valid(k)
        j = bisect_right(lst, t)
        if j < len(lst):
            b, kind = lst[j], (BlockKind.WALL_TRUNCATED if from_wall else BlockKind.COMPLETE)
        else:
            b, kind = self.t_now + 1, BlockKind.PARTIAL
        return Block(k, a, b, kind)

    def blocks(self, k: int) -> list[Block]:
        """All scale-k blocks, newest first."""
        self._check_scale(k)
        lst, head = self._valid(k)
        es = lst[head:]
        out: list[Block] = []
        top = self.t_now + 1
        if not es:
            return [Block(k, self.wall, top, BlockKind.WALL_TRUNCATED)]
        out.append(Block(k, es[-1], top, BlockKind.PARTIAL))
        for i in range(len(es) - 1, 0, -1):
            out.append(Block(k, es[i - 1], es[i], BlockKind.COMPLETE))
        out.append(Block(k, self.wall, es[0], BlockKind.WALL_TRUNCATED))
        return out

    # --- structural queries -------------------------------------------------

    def n_sub(self, block: Block) -> int | float:
        """Number of scale-(k-1) blocks tiling this scale-k block.

        At the base scale the convention is the distance from the newest
        time to the block start. Returns math.inf for a hand-built block
        whose start is not a finer-scale boundary (cannot happen for blocks
        produced by this index, where boundaries nest by construction).
        """
        k = block.k
        self._check_scale(k)
        if k == self.table.K:
            return self.t_now - block.a
        if block.a != self.wall:
            lst, head = self._valid(k - 1)
            i = bisect_left(lst, block.a)
            if i < head or i >= len(lst) or lst[i] != block.a:
                return math.inf
        return self.count_ends_in(k - 1, block.a, block.b - 1) + 1

    def beginning(self, block: Block) -> tuple[int, int]:
        """The old end of the block that stays eligible: an interval [lo, hi)."""
        k = block.k
        self._check_scale(k)
        table = self.table
        if k == table.K:
            return block.a, min(block.b, block.a + table.begin_len_K)
        count = table.begin_count[k]
        bounds = self.ends_in(k - 1, block.a, block.b - 1)
        if len(bounds) + 1 <= count:
            return block.a, block.b
        return block.a, bounds[count - 1]

    def opening_strips(self, block: Block) -> tuple[tuple[int, int], ...]:
        """Opening of a block as disjoint half-open strips, oldest first.

        A position survives when, at every scale from the base up to the
        block's own, it sits in the beginning of its enclosing block and
        within the next coarser recurrence span of that block's start.
        """
        self._check_scale(block.k)
        return tuple(self._strips(block.k, block.a, block.b))

    def _strips(self, k: int, a: int, b: int) -> list[tuple[int, int]]:
        table = self.table
        limit = a + table.beta[k + 1]
        if k == table.K:
            hi = min(b, a + table.begin_len_K, limit)
            return [(a, hi)] if hi > a else []
        count = table.begin_count[k]
        bounds = self.ends_in(k - 1, a, b - 1)
        if len(bounds) + 1 > count:
            edges = [a] + bounds[:count]
        else:
            edges = [a] + bounds + [b]
        out: list[tuple[int, int]] = []
        done = False
        for sa, sb in zip(edges[:-1], edges[1:]):
            if sa >= limit or done:
                break
            for s, e in self._strips(k - 1, sa, sb):
                if s >= limit:
                    done = True
                    break
                out.append((s, min(e, limit)))
        return out

    def opening(self, block: Block) -> OpeningSet:
        return OpeningSet(block=block, strips=self.opening_strips(block))

    def k0_at(self, t: int) -> K0Result:
        """Deepest scale whose opening still contains position t."""
        table = self.table
        k0 = table.K - 1
        for k in range(table.K, table.k_max + 1):
            a = self.last_end_at_or_before(k, t)
            if a is None:
                a = self.wall
            if t - a >= table.beta[k + 1]:
                break
            if k == table.K:
                if t - a >= table.begin_len_K:
                    break
            else:
                count = table.begin_count[k]
                if self.count_ends_in(k - 1, a, t, stop_after=count - 1) + 1 > count:
                    break
            k0 = k
        return K0Result(k0=k0, capped=(k0 == table.k_max))


# --- one-shot functional layer ---------------------------------------------


def find_pattern_ends(y_row, k: int, table: ScaleTable, start: int | None = None) -> list[int]:
    """Every position whose trailing cells spell the scale-k marker word.

    Only in-window occurrences count; the implicit wall end just before
    the window is a convention of the block layer, not of this scan.
    """
    if k < 1 or k > table.k_max + 2:
        raise ScaleOutOfRange(f"scale {k} outside the table range [1, {table.k_max + 2}]")
    y = _as_row(y_row)
    if start is None:
        start = -(len(y) - 1)
    ell = table.ell[k]
    minus = np.flatnonzero(y == -1)
    if not len(minus):
        return []
    prev = np.empty_like(minus)
    prev[0] = -1
    prev[1:] = minus[:-1]
    runs = minus - prev - 1
    return (minus[runs >= ell - 1] + start).tolist()


def decompose(y_row, k: int, table: ScaleTable, start: int | None = None) -> list[Block]:
    """Scale-k blocks of the window, newest first."""
    y = _as_row(y_row)
    if start is None:
        start = -(len(y) - 1)
    idx = WindowIndex.scan(y, table, start)
    return idx.blocks(k)


def count_subblocks(index: WindowIndex, k: int, block: Block | None = None):
    """Sub-block count of the newest scale-k block (or a given one)."""
    if block is None:
        block = index.block_of(k, index.t_now)
    return index.n_sub(block)


def beginning(block: Block, index: WindowIndex) -> tuple[int, int]:
    return index.beginning(block)


def opening(block: Block, index: WindowIndex) -> OpeningSet:
    return index.opening(block)


def k0_of(index: WindowIndex, strict: bool = True) -> K0Result:
    """k0 at the newest position of the indexed window.

    With ``strict`` the window must cover beta_{k_max+2}; without it the
    wall convention supplies the missing past (used by the variation lab,
    which certifies lower bounds over wall-completed windows).
    """
    depth_needed = index.table.beta[index.table.k_max + 2]
    if strict and index.t_now - index.wall + 1 < depth_needed:
        raise WindowTooShort(
            f"window of {index.t_now - index.wall + 1} cells cannot support "
            f"bias decisions that look back {depth_needed}"
        )
    return index.k0_at(index.t_now)


class BlockDecomposition:
    """Newest-first labeled view of every scale's blocks for one window."""

    def __init__(self, index: WindowIndex):
        self.index = index
        self._cache: dict[int, list[Block]] = {}

    def blocks(self, k: int) -> list[Block]:
        if k not in self._cache:
            self._cache[k] = self.index.blocks(k)
        return self._cache[k]

    def a(self, k: int, i: int) -> int:
        return self.blocks(k)[i - 1].a

    def b(self, k: int, i: int) -> int:
        return self.blocks(k)[i - 1].b


def decompose_all(y_row, table: ScaleTable, start: int | None = None) -> BlockDecomposition:
    y = _as_row(y_row)
    if start is None:
        start = -(len(y) - 1)
    return BlockDecomposition(WindowIndex.scan(y, table, start))
