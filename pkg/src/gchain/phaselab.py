"""Block signatures and the two-boundary experiment.

The x-content of a block is summarized by its signature: the sign of
the x-sum over the odd-size core of the block's opening. Along a
trajectory these signatures persist from each scale to the next with
high probability, so a run remembers which way its wall pushed it.
Running replicates against the +1 wall and the -1 wall and comparing
top-scale mean signatures is the headline exhibit: two boundary
conditions, two distinct long-run behaviours under one transition law.

Everything here analyzes realized trajectories after the fact; the
analysis scan is independent of the incremental index the simulator
maintains while stepping.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .blockscan import Block, BlockKind, WindowIndex
from .blockstats import is_good
from .chain import BOUNDARIES, init as chain_init, mirror_pair
from .params import InvalidParameter, ScaleTable
from .rng import fair_signs, philox_generator

# analysis-side stream ids; disjoint from the simulator's chain streams
_BOOT_STREAM = 0xB0075
_NULL_X_STREAM = 0x4E756C6C
_GROUP_BOOT_SEED = 0x67726F75


class EmptyOpening(ValueError):
    """Block has no opening positions, so no signature is defined."""


@dataclass(frozen=True)
class Signature:
    """Sign of the x-sum over the odd-size voting core of one block."""

    block: Block
    core_size: int
    value: int


def signature(block: Block, x_row, index: WindowIndex) -> Signature:
    """Signature of `block` on the x symbols aligned with index.start.

    The core is the block's opening with its newest position dropped
    when the opening has even size; an odd count of +-1 symbols cannot
    sum to zero, so the value is always +1 or -1.
    """
    op = index.opening(block)
    if op.size == 0:
        raise EmptyOpening(
            f"scale-{block.k} block [{block.a}, {block.b}) has an empty opening")
    pos = op.positions()
    if pos.size % 2 == 0:
        pos = pos[:-1]
    x = np.asarray(x_row)
    total = int(x[pos - index.start].sum())
    assert total != 0 and total % 2 != 0
    return Signature(block=block, core_size=int(pos.size),
                     value=1 if total > 0 else -1)


# --- beautiful points --------------------------------------------------------

def _scale_ok(index: WindowIndex, t: int, j: int) -> bool:
    """Position t sits outside the beginning of a good, complete j block."""
    blk = index.block_of(j, t)
    if blk.kind is not BlockKind.COMPLETE:
        return False
    if not is_good(index.table, j, len(blk), index.opening(blk).size):
        return False
    lo, hi = index.beginning(blk)
    return not (lo <= t < hi)


def _check_beauty_scales(table: ScaleTable, k: int, k_top: int) -> None:
    if not (table.K <= k <= k_top <= table.k_max):
        raise InvalidParameter(
            f"beauty scales need K <= k <= k_top <= k_max, got k={k}, "
            f"k_top={k_top} with K={table.K}, k_max={table.k_max}")


def is_beautiful(index: WindowIndex, t: int, k: int,
                 k_top: int | None = None) -> bool:
    """True when every scale j in [k, k_top] has B_j(t) good and t past
    its beginning. k_top defaults to the deepest scale the table carries;
    blocks cut off by the window or the wall fail the test outright."""
    k_top = index.table.k_max if k_top is None else k_top
    _check_beauty_scales(index.table, k, k_top)
    return all(_scale_ok(index, t, j) for j in range(k, k_top + 1))


def min_beautiful_scale(index: WindowIndex, t: int,
                        k_top: int | None = None) -> int | None:
    """Smallest k whose whole scale range [k, k_top] passes, or None."""
    table = index.table
    k_top = table.k_max if k_top is None else k_top
    _check_beauty_scales(table, table.K, k_top)
    k_hat = None
    for j in range(k_top, table.K - 1, -1):
        if not _scale_ok(index, t, j):
            break
        k_hat = j
    return k_hat


# --- per-trajectory report ---------------------------------------------------

@dataclass(frozen=True)
class PersistenceReport:
    """Signature and beauty statistics of one realized trajectory.

    Per scale: count and mean of signatures over complete blocks fully
    inside the generated span, agreement of X(B_k) with X(B_{k+1}) on a
    position grid of pitch beta_{k+1}, and the fraction of grid sites
    that are k-beautiful. The top-scale mean carries a percentile
    bootstrap interval over whole-block resamples.
    """

    boundary: str
    seed: int
    steps: int
    k_top: int
    scales: tuple[int, ...]
    n_signed: dict[int, int]
    n_excluded: dict[int, int]
    n_unfinished: dict[int, int]
    mean_signature: dict[int, float]
    agreement: dict[int, tuple[int, int]]
    agreement_rate: dict[int, float]
    spacing: dict[int, int]
    top_mean: float
    top_ci: tuple[float, float]
    n_boot: int
    beautiful_freq: dict[int, float]
    n_sites: int
    site_spacing: int
    null_wall: bool = False


def _signature_sweep(index: WindowIndex, x_row):
    """Signature value per fully generated complete block, keyed by start."""
    table = index.table
    values: dict[int, dict[int, int]] = {}
    n_excluded: dict[int, int] = {}
    n_unfinished: dict[int, int] = {}
    for k in range(table.K, table.k_max + 1):
        vals: dict[int, int] = {}
        excl = 0
        unfin = 0
        for blk in index.blocks(k):
            if blk.kind is not BlockKind.COMPLETE:
                unfin += 1
                continue
            if blk.a < 0:
                excl += 1  # reaches into the wall fill
                continue
            try:
                vals[blk.a] = signature(blk, x_row, index).value
            except EmptyOpening:
                excl += 1
        values[k] = vals
        n_excluded[k] = excl
        n_unfinished[k] = unfin
    return values, n_excluded, n_unfinished


def _beauty_frequencies(index: WindowIndex, site_spacing: int):
    """Beautiful fraction per scale over a site grid inside the span
    covered by fully generated top-scale blocks."""
    table = index.table
    K, k_top = table.K, table.k_max
    tops = [b for b in index.blocks(k_top)
            if b.kind is BlockKind.COMPLETE and b.a >= 0]
    if not tops:
        return {k: 0.0 for k in range(K, k_top + 1)}, 0
    lo = min(b.a for b in tops)
    hi = max(b.b for b in tops)
    cache: dict[tuple[int, int], tuple[bool, int, int]] = {}
    passes = {k: 0 for k in range(K, k_top + 1)}
    n_sites = 0
    for t in range(lo, hi, site_spacing):
        n_sites += 1
        ok = True
        conds = []
        for j in range(K, k_top + 1):
            blk = index.block_of(j, t)
            if blk.kind is not BlockKind.COMPLETE:
                conds.append(False)
                continue
            key = (j, blk.a)
            got = cache.get(key)
            if got is None:
                good = is_good(table, j, len(blk), index.opening(blk).size)
                b_lo, b_hi = index.beginning(blk)
                got = (good, b_lo, b_hi)
                cache[key] = got
            good, b_lo, b_hi = got
            conds.append(good and not (b_lo <= t < b_hi))
        for i in range(k_top - K, -1, -1):  # k-beauty needs all j >= k
            ok = ok and conds[i]
            if ok:
                passes[K + i] += 1
    return {k: passes[k] / n_sites for k in passes}, n_sites


def _block_bootstrap_ci(vals: np.ndarray, n_boot: int,
                        gen) -> tuple[float, float]:
    n = len(vals)
    idx = gen.integers(0, n, size=(n_boot, n))
    means = vals[idx].mean(axis=1)
    lo, hi = np.percentile(means, [2.5, 97.5])
    return float(lo), float(hi)


def _analyze_state(state, site_spacing: int | None, n_boot: int,
                   null_wall: bool) -> PersistenceReport:
    table = state.table
    x_full, y_full, start = state.full_rows()
    index = WindowIndex.scan(y_full, table, start)
    steps = state.pos
    K, k_top = table.K, table.k_max

    values, n_excluded, n_unfinished = _signature_sweep(index, x_full)
    scales = tuple(range(K, k_top + 1))
    n_signed = {k: len(values[k]) for k in scales}
    mean_signature = {
        k: (float(np.mean(list(values[k].values()))) if values[k] else 0.0)
        for k in scales
    }

    agreement: dict[int, tuple[int, int]] = {}
    agreement_rate: dict[int, float] = {}
    spacing: dict[int, int] = {}
    for k in scales[:-1]:
        sp = int(table.beta[k + 1])
        spacing[k] = sp
        agree = total = 0
        for t in range(0, steps, sp):
            va = values[k].get(index.block_of(k, t).a)
            vb = values[k + 1].get(index.block_of(k + 1, t).a)
            if va is None or vb is None:
                continue
            total += 1
            agree += int(va == vb)
        agreement[k] = (agree, total)
        if total:
            agreement_rate[k] = agree / total

    top_vals = np.array(sorted(values[k_top].items()), dtype=float)
    if top_vals.size == 0:
        raise RuntimeError(
            "no fully generated complete top-scale block; increase steps")
    top_vals = top_vals[:, 1]
    top_mean = float(top_vals.mean())
    boot_gen = philox_generator(
        state.seed, _BOOT_STREAM + BOUNDARIES.index(state.boundary))
    top_ci = _block_bootstrap_ci(top_vals, n_boot, boot_gen)

    if site_spacing is None:
        site_spacing = int(table.beta[K])
    beautiful_freq, n_sites = _beauty_frequencies(index, site_spacing)

    return PersistenceReport(
        boundary=state.boundary, seed=state.seed, steps=steps, k_top=k_top,
        scales=scales, n_signed=n_signed, n_excluded=n_excluded,
        n_unfinished=n_unfinished, mean_signature=mean_signature,
        agreement=agreement, agreement_rate=agreement_rate, spacing=spacing,
        top_mean=top_mean, top_ci=top_ci, n_boot=n_boot,
        beautiful_freq=beautiful_freq, n_sites=n_sites,
        site_spacing=site_spacing, null_wall=null_wall,
    )


def _validate_experiment(table: ScaleTable, steps: int,
                         site_spacing: int | None, n_boot: int) -> None:
    need = int(table.beta[table.k_max + 1])
    if steps < need:
        raise InvalidParameter(
            f"steps must be >= beta[k_max+1] = {need}, got {steps}")
    if site_spacing is not None and site_spacing < 1:
        raise InvalidParameter(f"site_spacing must be >= 1, got {site_spacing}")
    if n_boot < 1:
        raise InvalidParameter(f"n_boot must be >= 1, got {n_boot}")


def persistence_experiment(table: ScaleTable, boundary: str, seed: int,
                           steps: int, *, site_spacing: int | None = None,
                           n_boot: int = 1000) -> PersistenceReport:
    """Run one trajectory against the given wall and analyze it."""
    _validate_experiment(table, steps, site_spacing, n_boot)
    state = chain_init(table, boundary, seed, capacity_hint=steps)
    state.run_steps(steps)
    return _analyze_state(state, site_spacing, n_boot, null_wall=False)


def _null_replicate(table: ScaleTable, boundary: str, seed: int, steps: int,
                    site_spacing: int | None, n_boot: int) -> PersistenceReport:
    """Control replicate: the x side of the wall fill is i.i.d. fair signs
    instead of a constant, drawn once per replicate from its own stream.
    The boundary label is kept only to pair replicates across groups."""
    state = chain_init(table, boundary, seed, capacity_hint=steps)
    gen = philox_generator(seed, _NULL_X_STREAM + BOUNDARIES.index(boundary))
    state.x_buf[: state.W] = fair_signs(gen, state.W)
    state.run_steps(steps)
    return _analyze_state(state, site_spacing, n_boot, null_wall=True)


# --- multi-seed contrast -----------------------------------------------------

@dataclass(frozen=True)
class ContrastReport:
    """Top-scale mean signatures per boundary over seed replicates.

    Group intervals are percentile bootstrap over the per-seed means
    (a single replicate yields the uninformative full line). The
    separation interval resamples the two groups independently.
    """

    steps: int
    k_top: int
    seeds: tuple[int, ...]
    null_shuffle: bool
    plus_means: tuple[float, ...]
    minus_means: tuple[float, ...]
    plus_mean: float
    minus_mean: float
    plus_ci: tuple[float, float]
    minus_ci: tuple[float, float]
    separation: float
    separation_ci: tuple[float, float]
    cis_disjoint: bool
    n_boot: int
    reports: tuple[PersistenceReport, ...]


def _group_means(gen, vals: np.ndarray, n_boot: int) -> np.ndarray:
    idx = gen.integers(0, len(vals), size=(n_boot, len(vals)))
    return vals[idx].mean(axis=1)


def boundary_contrast(table: ScaleTable, seeds, steps: int, *,
                      null_shuffle: bool = False,
                      site_spacing: int | None = None,
                      n_boot: int = 1000) -> ContrastReport:
    """Replicate both walls over the given seeds and compare top-scale
    mean signatures; aggregation order is (boundary, seed)."""
    seed_list = tuple(sorted(int(s) for s in seeds))
    if not seed_list:
        raise InvalidParameter("at least one seed is required")
    if len(set(seed_list)) != len(seed_list):
        raise InvalidParameter("seeds must be distinct")
    _validate_experiment(table, steps, site_spacing, n_boot)

    reports: list[PersistenceReport] = []
    means: dict[str, list[float]] = {b: [] for b in BOUNDARIES}
    for boundary in BOUNDARIES:
        for seed in seed_list:
            if null_shuffle:
                rep = _null_replicate(table, boundary, seed, steps,
                                      site_spacing, n_boot)
            else:
                rep = persistence_experiment(
                    table, boundary, seed, steps,
                    site_spacing=site_spacing, n_boot=n_boot)
            reports.append(rep)
            means[boundary].append(rep.top_mean)

    plus = np.array(means["PlusWall"], dtype=float)
    minus = np.array(means["MinusWall"], dtype=float)
    gen = philox_generator(_GROUP_BOOT_SEED, 0)
    if len(seed_list) == 1:
        plus_ci = minus_ci = sep_ci = (float("-inf"), float("inf"))
    else:
        bp = _group_means(gen, plus, n_boot)
        bm = _group_means(gen, minus, n_boot)
        plus_ci = (float(np.percentile(bp, 2.5)), float(np.percentile(bp, 97.5)))
        minus_ci = (float(np.percentile(bm, 2.5)), float(np.percentile(bm, 97.5)))
        diffs = bp - bm
        sep_ci = (float(np.percentile(diffs, 2.5)),
                  float(np.percentile(diffs, 97.5)))
    disjoint = plus_ci[0] > minus_ci[1] or minus_ci[0] > plus_ci[1]

    return ContrastReport(
        steps=steps, k_top=table.k_max, seeds=seed_list,
        null_shuffle=null_shuffle,
        plus_means=tuple(float(v) for v in plus),
        minus_means=tuple(float(v) for v in minus),
        plus_mean=float(plus.mean()), minus_mean=float(minus.mean()),
        plus_ci=plus_ci, minus_ci=minus_ci,
        separation=float(plus.mean() - minus.mean()), separation_ci=sep_ci,
        cis_disjoint=bool(disjoint), n_boot=n_boot, reports=tuple(reports),
    )


# --- coupled mirror ----------------------------------------------------------

@dataclass(frozen=True)
class MirrorCheck:
    """Blockwise comparison of a coupled wall pair's signatures."""

    seed: int
    steps: int
    n_blocks: int
    per_scale: dict[int, int]
    mismatches: int
    exact: bool


def coupled_mirror_check(table: ScaleTable, seed: int,
                         steps: int) -> MirrorCheck:
    """Run the coupled +1/-1 wall pair on shared uniforms and compare
    signatures block by block; the two trajectories are analyzed
    independently and must disagree in sign everywhere."""
    plus, minus = mirror_pair(table, seed, steps)
    reps = []
    for state in (plus, minus):
        x_full, y_full, start = state.full_rows()
        index = WindowIndex.scan(y_full, table, start)
        reps.append(_signature_sweep(index, x_full)[0])
    vp, vm = reps
    n_blocks = 0
    mismatches = 0
    per_scale: dict[int, int] = {}
    for k in range(table.K, table.k_max + 1):
        if set(vp[k]) != set(vm[k]):
            mismatches += len(set(vp[k]) ^ set(vm[k]))
        common = set(vp[k]) & set(vm[k])
        per_scale[k] = len(common)
        n_blocks += len(common)
        for a in common:
            if vp[k][a] != -vm[k][a]:
                mismatches += 1
    return MirrorCheck(seed=seed, steps=steps, n_blocks=n_blocks,
                       per_scale=per_scale, mismatches=mismatches,
                       exact=(mismatches == 0))
