"""Transition-law evaluator: voting set, bias, and the four-coordinate output.

Given a finite past (x-row, y-row), the law of the next pair (x0, y0) is
assembled in four steps: y0 is a fair coin; the candidate ȳ = (y, y0)
determines a depth k0 and an odd voting set S of past positions; a bias
upsilon in [0, 0.4] is chosen from k0 and the age of S; then
g1 = 0.5 + upsilon * sign(sum of x over S) and the four coordinates are
p(x0,+1) = 0.5*g1(+1-branch), p(x0,-1) = 0.5*g1(-1-branch) split by x0.

Both y0 branches are computed independently on the appended window; no
structure sharing between branches is assumed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .blockscan import WindowIndex, WindowTooShort, k0_of
from .params import ScaleTable

INVARIANT_TOL = 1e-12

_BOUNDARIES = ("PlusWall", "MinusWall")


class PositionOutOfWindow(ValueError):
    pass


@dataclass(frozen=True)
class PastWindow:
    """Finite two-row ±1 history over [start, start+n), newest cell last.

    The candidate y0 is appended at position t_now = start + n during
    evaluation. `boundary` records which deterministic fill produced
    everything older than the window; the evaluator itself never reads
    past the window (the wall convention supplies that), so the tag is
    descriptive metadata here and an operative knob only in the chain.
    """

    x_row: np.ndarray
    y_row: np.ndarray
    start: int
    boundary: str = "PlusWall"

    def __post_init__(self):
        x = np.asarray(self.x_row, dtype=np.int8)
        y = np.asarray(self.y_row, dtype=np.int8)
        if x.shape != y.shape or x.ndim != 1 or len(x) == 0:
            raise ValueError("x and y rows must be equal-length nonempty vectors")
        if not (np.all(np.abs(x) == 1) and np.all(np.abs(y) == 1)):
            raise ValueError("window entries must be +1 or -1")
        if self.boundary not in _BOUNDARIES:
            raise ValueError(f"boundary must be one of {_BOUNDARIES}")
        object.__setattr__(self, "x_row", x)
        object.__setattr__(self, "y_row", y)

    @classmethod
    def from_rows(cls, x_row, y_row, t_now: int = 0, boundary: str = "PlusWall") -> "PastWindow":
        y = np.asarray(y_row)
        return cls(x_row, y_row, start=t_now - len(y), boundary=boundary)

    def __len__(self) -> int:
        return len(self.y_row)

    @property
    def t_now(self) -> int:
        return self.start + len(self.y_row)


@dataclass(frozen=True)
class SSelection:
    """The odd (or empty) voting set for one appended candidate y0."""

    positions: tuple[int, ...]
    k0: int
    dropped_max: bool
    capped: bool
    t_now: int


@dataclass(frozen=True)
class BranchEval:
    """Diagnostics of one y0 branch."""

    y0: int
    k0: int
    capped: bool
    s_size: int
    dropped_max: bool
    s_min: int | None
    upsilon: float
    g1: float


@dataclass(frozen=True)
class GOutput:
    """Four-coordinate law of (x0, y0) plus evaluation diagnostics.

    The scalar diagnostics describe the deeper of the two y0 branches
    (ties resolved toward the +1 branch); per-branch detail is kept in
    `plus` and `minus`.
    """

    p11: float
    pm11: float
    p1m1: float
    pm1m1: float
    k0_used: int
    S_size: int
    upsilon_used: float
    plus: BranchEval
    minus: BranchEval

    def coords(self) -> tuple[float, float, float, float]:
        return (self.p11, self.pm11, self.p1m1, self.pm1m1)

    def as_dict(self) -> dict:
        def branch(b: BranchEval) -> dict:
            return {
                "y0": b.y0, "k0": b.k0, "capped": b.capped, "S_size": b.s_size,
                "dropped_max": b.dropped_max, "S_min": b.s_min,
                "upsilon": b.upsilon, "g1": b.g1,
            }
        return {
            "p11": self.p11, "pm11": self.pm11, "p1m1": self.p1m1, "pm1m1": self.pm1m1,
            "k0": self.k0_used, "S_size": self.S_size, "upsilon": self.upsilon_used,
            "plus": branch(self.plus), "minus": branch(self.minus),
        }


def select_voting_strips(index: WindowIndex, strict: bool = True):
    """Core of the voting-set rule, kept in strip form for the hot path.

    Returns (k0, capped, strips, dropped_max): the opening of the
    (k0+1)-block containing t_now, trimmed of its newest site when
    even-sized; no strips when k0 is capped at the top scale.
    """
    res = k0_of(index, strict=strict)
    if res.capped:
        return res.k0, True, (), False
    blk = index.block_of(res.k0 + 1, index.t_now)
    strips = list(index.opening_strips(blk))
    size = sum(e - s for s, e in strips)
    dropped = False
    if size and size % 2 == 0:
        s, e = strips[-1]
        if e - 1 > s:
            strips[-1] = (s, e - 1)
        else:
            strips.pop()
        dropped = True
    if strips and (strips[0][0] < index.wall or strips[-1][1] > index.t_now):
        raise AssertionError("voting set escaped the visible past")
    return res.k0, False, tuple(strips), dropped


def bias_for(table: ScaleTable, k0: int, s_min: int | None, t_now: int) -> float:
    """Bias for the majority copy; the age rule wins over everything else."""
    if s_min is not None and s_min < t_now - table.beta[k0 + 2]:
        return 0.0
    if k0 == table.K - 1:
        return 0.4
    return table.upsilon[k0]


def select_S(ybar, table: ScaleTable | None = None, start: int | None = None,
             strict: bool = True) -> SSelection:
    """Voting set from an appended window ȳ (its newest cell is y0).

    Accepts a prebuilt WindowIndex or a raw ±1 row. S is the opening of
    the (k0+1)-block containing t_now, with its newest member dropped if
    even-sized; S is empty when k0 is capped at the top scale.
    """
    if isinstance(ybar, WindowIndex):
        index = ybar
    else:
        if table is None:
            raise ValueError("table required when passing a raw row")
        row = np.asarray(ybar, dtype=np.int8)
        if start is None:
            start = -(len(row) - 1)
        index = WindowIndex.scan(row, table, start)
    k0, capped, strips, dropped = select_voting_strips(index, strict=strict)
    positions = tuple(p for s, e in strips for p in range(s, e))
    return SSelection(positions, k0, dropped, capped, index.t_now)


def select_upsilon(sel: SSelection, table: ScaleTable) -> float:
    s_min = sel.positions[0] if sel.positions else None
    return bias_for(table, sel.k0, s_min, sel.t_now)


def g1(x_row, S, upsilon: float, start: int | None = None) -> float:
    """0.5 + upsilon * sign of the x-majority over S; sign(0) = 0."""
    positions = S.positions if isinstance(S, SSelection) else tuple(S)
    x = np.asarray(x_row, dtype=np.int8)
    if start is None:
        start = -len(x)
    total = 0
    n = len(x)
    for p in positions:
        i = p - start
        if not 0 <= i < n:
            raise PositionOutOfWindow(f"voting position {p} outside [{start}, {start + n - 1}]")
        total += int(x[i])
    s = (total > 0) - (total < 0)
    return 0.5 + upsilon * s


def evaluate(window: PastWindow, table: ScaleTable, strict: bool = True) -> GOutput:
    """Four-coordinate law of the next pair given the window.

    Each y0 branch re-derives the block structure of its own appended ȳ.
    With `strict` the window must reach the full decision depth
    beta_{k_max+2}; without it the wall convention completes the past
    (short-window labs use that mode).
    """
    n = len(window)
    if strict and n < table.beta[table.k_max + 2]:
        raise WindowTooShort(
            f"window of {n} cells is shorter than the decision depth "
            f"{table.beta[table.k_max + 2]}"
        )
    index = WindowIndex.scan(window.y_row, table, window.start)
    branches: dict[int, BranchEval] = {}
    for y0 in (1, -1):
        token = index.push(y0)
        sel = select_S(index, strict=False)
        ups = select_upsilon(sel, table)
        gval = g1(window.x_row, sel, ups, start=window.start)
        index.undo(token)
        branches[y0] = BranchEval(
            y0=y0, k0=sel.k0, capped=sel.capped, s_size=len(sel.positions),
            dropped_max=sel.dropped_max,
            s_min=sel.positions[0] if sel.positions else None,
            upsilon=ups, g1=gval,
        )
    plus, minus = branches[1], branches[-1]
    p11, pm11 = 0.5 * plus.g1, 0.5 * (1.0 - plus.g1)
    p1m1, pm1m1 = 0.5 * minus.g1, 0.5 * (1.0 - minus.g1)
    total = p11 + pm11 + p1m1 + pm1m1
    assert abs(total - 1.0) <= INVARIANT_TOL
    for c in (p11, pm11, p1m1, pm1m1):
        assert 0.05 - INVARIANT_TOL <= c <= 0.45 + INVARIANT_TOL
    lead = plus if plus.k0 >= minus.k0 else minus
    return GOutput(
        p11=p11, pm11=pm11, p1m1=p1m1, pm1m1=pm1m1,
        k0_used=lead.k0, S_size=lead.s_size, upsilon_used=lead.upsilon,
        plus=plus, minus=minus,
    )
