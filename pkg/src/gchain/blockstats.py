"""Monte-Carlo laboratory for the single-scale block measure.

A scale-k block is the stretch between two consecutive marker ends.
Conditioned on a marker ending just before the origin, the segment of a
fair stream up to and including the next marker completion is an exact
draw from the block measure: every admissible segment of length n has
probability 2^-n, and the mean length is beta_k.

Two independent sampling routes are provided on purpose. The per-sample
route (`sample_mk_block`) waits for one marker at a time; the harvest
route (`harvest_lengths`) reads many consecutive blocks off one long
stream. Tests compare them against each other and against exact
enumeration.
"""

from dataclasses import dataclass

import numpy as np

from .blockscan import Block, BlockKind, WindowIndex
from .blockscan import opening as _opening
from .params import ScaleOutOfRangeForTable, ScaleTable

RUNAWAY_LIMIT = 10**9


class RunawayLength(RuntimeError):
    """A single draw consumed more bits than the abort threshold."""


@dataclass(frozen=True)
class BlockSample:
    """One draw from the scale-k block measure.

    `segment` holds the y values strictly after the conditioning marker,
    ending with the -1 that completes the next occurrence. `opening_size`
    and `good` are filled only when the draw was embedded in a planted
    context (see `opening_size_with_context`).
    """

    k: int
    segment: np.ndarray
    length: int
    opening_size: int | None = None
    good: bool | None = None


@dataclass(frozen=True)
class TailHistogram:
    """Empirical bucket masses of {j*beta < |B| <= (j+1)*beta}.

    `ytilde` is the first-bucket capture probability, the chance the
    next marker lands within beta sites. `violations` lists buckets
    whose mass falls outside the target envelope by more than three
    standard errors (standard error taken at the tested edge, so empty
    far buckets are not spuriously flagged).
    """

    k: int
    bucket_masses: np.ndarray
    bucket_se: np.ndarray
    sample_count: int
    ytilde: float
    violations: tuple[int, ...]


@dataclass(frozen=True)
class GoodProbEstimate:
    """Size-biased estimate of P(the block covering a fixed site is good).

    The block covering a site is a length-biased draw from the block
    measure, so weighting each sampled block by length/beta reweights
    exactly; `mean_len_ratio` is the total weight and equals 1 in
    expectation, which doubles as a sampler calibration check.
    """

    k: int
    n: int
    p_good: float
    se: float
    mean_len_ratio: float
    mean_len_ratio_se: float


@dataclass(frozen=True)
class GoodFrequency:
    """Site-weighted good fraction over the complete scale-k blocks of a row."""

    k: int
    n_blocks: int
    covered_sites: int
    freq: float
    se: float


def _check_scale(table: ScaleTable, k: int) -> int:
    if k not in table.ell:
        raise ScaleOutOfRangeForTable(k, max(table.ell))
    return table.ell[k]


def _first_end(signs: np.ndarray, run_in: int, need: int):
    """Position of the first marker end in `signs` given `run_in` carried
    +1s, or (None, run_out)."""
    minus = np.flatnonzero(signs < 0)
    if len(minus) == 0:
        return None, run_in + len(signs)
    runs = np.diff(minus, prepend=-1) - 1  # +1s before each -1, within the chunk
    runs[0] += run_in
    hits = np.flatnonzero(runs >= need)
    if len(hits):
        return int(minus[hits[0]]), 0
    return None, len(signs) - 1 - int(minus[-1])


def sample_mk_block(table: ScaleTable, k: int, rng, with_opening: bool = True) -> BlockSample:
    """Draw one scale-k block by waiting for the next marker completion.

    Fair signs are drawn until a run of ell_k - 1 plus-ones is closed by
    a -1; the conditioning marker contributes no head start because it
    ends with a -1. Aborts with RunawayLength past 10^9 bits.

    When `with_opening` is set (requires K <= k <= k_max) the segment is
    embedded in a planted context and the opening size and good flag are
    computed.
    """
    ell = _check_scale(table, k)
    need = ell - 1
    chunk = min(max(64, table.beta[k]), 1 << 22)
    pieces = []
    run = 0
    total = 0
    while True:
        signs = (2 * rng.integers(0, 2, size=chunk, dtype=np.int8) - 1).astype(np.int8)
        pos, run = _first_end(signs, run, need)
        if pos is not None:
            pieces.append(signs[: pos + 1])
            break
        pieces.append(signs)
        total += chunk
        if total > RUNAWAY_LIMIT:
            raise RunawayLength(
                f"no scale-{k} marker within {total} bits (limit {RUNAWAY_LIMIT})")
    segment = pieces[0] if len(pieces) == 1 else np.concatenate(pieces)
    length = len(segment)
    if not with_opening:
        return BlockSample(k, segment, length)
    size = opening_size_with_context(table, k, segment)
    return BlockSample(k, segment, length, size, is_good(table, k, length, size))


def opening_size_with_context(table: ScaleTable, k: int, segment) -> int:
    """|C(B)| for an isolated segment, embedded after a planted marker.

    The wall sits at the first planted site, so the planted marker end is
    a valid end at every scale up to k and the sub-scale structure inside
    the segment is the only structure the opening recursion sees. This
    matches how the same block would be read off a chain window.
    """
    segment = np.asarray(segment, dtype=np.int8)
    ell = _check_scale(table, k)
    ybar = np.empty(ell + len(segment), dtype=np.int8)
    ybar[: ell - 1] = 1
    ybar[ell - 1] = -1
    ybar[ell:] = segment
    index = WindowIndex.scan(ybar, table, start=0)
    a = ell - 1
    block = Block(k=k, a=a, b=a + len(segment), kind=BlockKind.COMPLETE)
    return _opening(block, index).size


def is_good(table: ScaleTable, k: int, length: int, opening_size: int) -> bool:
    """Both goodness gates: strictly shorter than the length bound and
    strictly more open than the opening bound (floored integer thresholds
    from the scale table)."""
    if k not in table.good_len_bound:
        raise ScaleOutOfRangeForTable(k, table.k_max)
    return length < table.good_len_bound[k] and opening_size > table.good_open_bound[k]


def harvest_lengths(table: ScaleTable, k: int, n: int, rng=None,
                    signs=None, chunk_bits: int = 1 << 22) -> np.ndarray:
    """Lengths of n consecutive scale-k blocks read off one fair stream.

    Gaps between successive marker ends are independent draws from the
    block measure; the head of the stream before the first end is
    discarded. Pass a fixed ±1 `signs` row instead of `rng` to harvest a
    known stream (tests cross-check this against an independent end
    scanner on the same row).
    """
    ell = _check_scale(table, k)
    need = ell - 1
    out = []
    got = 0
    run = 0
    offset = 0
    last_end = None
    limit = max(RUNAWAY_LIMIT, 8 * (n + 2) * table.beta[k])
    while got < n:
        if signs is not None:
            if offset >= len(signs):
                raise RunawayLength(
                    f"fixed stream exhausted after {got} of {n} blocks")
            block_row = np.asarray(signs[offset: offset + chunk_bits], dtype=np.int8)
        else:
            block_row = (2 * rng.integers(0, 2, size=chunk_bits, dtype=np.int8) - 1).astype(np.int8)
        minus = np.flatnonzero(block_row < 0)
        if len(minus):
            runs = np.diff(minus, prepend=-1) - 1
            runs[0] += run
            ends = minus[runs >= need].astype(np.int64) + offset
            if len(ends):
                if last_end is not None:
                    gaps = np.diff(ends, prepend=last_end)
                else:
                    gaps = np.diff(ends)
                out.append(gaps)
                got += len(gaps)
                last_end = int(ends[-1])
            run = len(block_row) - 1 - int(minus[-1])
        else:
            run += len(block_row)
        offset += len(block_row)
        if offset > limit:
            raise RunawayLength(
                f"harvest exceeded {limit} bits with {got} of {n} blocks")
    return np.concatenate(out)[:n]


def bucket_envelope(j: int) -> tuple[float, float]:
    """Open interval the mass of tail bucket j is checked against."""
    return 2.0 ** (-2 * j - 2), 2.5 ** (-j)


def tail_histogram(table: ScaleTable, k: int, n_samples: int, rng,
                   min_buckets: int = 6) -> TailHistogram:
    """Bucket the harvested block lengths by multiples of beta_k.

    n_samples of 10^5 or more gives buckets j <= 5 useful resolution;
    n_samples = 0 returns an empty histogram with no flags.
    """
    _check_scale(table, k)
    if n_samples == 0:
        return TailHistogram(k, np.zeros(0), np.zeros(0), 0, 0.0, ())
    lengths = harvest_lengths(table, k, n_samples, rng)
    beta = table.beta[k]
    j = (lengths - 1) // beta
    nb = max(int(j.max()) + 1, min_buckets)
    masses = np.bincount(j, minlength=nb) / n_samples
    se = np.sqrt(masses * (1.0 - masses) / n_samples)
    violations = []
    for jj in range(nb):
        lo, hi = bucket_envelope(jj)
        se_lo = (lo * (1.0 - lo) / n_samples) ** 0.5
        se_hi = (hi * (1.0 - hi) / n_samples) ** 0.5
        if masses[jj] < lo - 3 * se_lo or masses[jj] > hi + 3 * se_hi:
            violations.append(jj)
    return TailHistogram(k, masses, se, n_samples, float(masses[0]),
                         tuple(violations))


def good_prob_estimate(table: ScaleTable, k: int, n: int, rng) -> GoodProbEstimate:
    """Estimate P(the block covering a fixed site is good) by size-biased
    reweighting of n independent block draws. n of 10^4 or more gives a
    usable confidence interval at the active scales."""
    beta = table.beta[k]
    w = np.empty(n)
    wl = np.empty(n)
    for i in range(n):
        s = sample_mk_block(table, k, rng, with_opening=True)
        wl[i] = s.length / beta
        w[i] = wl[i] if s.good else 0.0
    root = n ** 0.5
    return GoodProbEstimate(
        k=k, n=n,
        p_good=float(w.mean()), se=float(w.std(ddof=1) / root),
        mean_len_ratio=float(wl.mean()),
        mean_len_ratio_se=float(wl.std(ddof=1) / root),
    )


def trajectory_good_frequency(table: ScaleTable, k: int, y_row,
                              start: int | None = None) -> GoodFrequency:
    """Site-weighted good fraction over the complete scale-k blocks of a
    row. Weighting by block length makes this directly comparable to the
    size-biased estimator; partial and wall blocks are skipped."""
    row = np.asarray(y_row, dtype=np.int8)
    if start is None:
        start = -(len(row) - 1)
    index = WindowIndex.scan(row, table, start=start)
    weights = []
    flags = []
    for b in index.blocks(k):
        if b.kind is not BlockKind.COMPLETE:
            continue
        size = index.opening(b).size
        weights.append(b.b - b.a)
        flags.append(is_good(table, k, b.b - b.a, size))
    if not weights:
        return GoodFrequency(k, 0, 0, 0.0, 0.0)
    wts = np.asarray(weights, dtype=float)
    good = np.asarray(flags, dtype=float)
    total = wts.sum()
    freq = float((wts * good).sum() / total)
    se = float(np.sqrt(((wts * (good - freq)) ** 2).sum()) / total)
    return GoodFrequency(k, len(weights), int(total), freq, se)


def promotion_probability(table: ScaleTable, k: int, n: int, rng) -> tuple[float, float]:
    """Fraction of scale-(k-1) blocks whose closing end is also a scale-k
    end, i.e. the chance a block survives to the next scale. The scale
    ratio gives the anchor value 1/nu_k. Returns (estimate, stderr)."""
    ell_hi = _check_scale(table, k)
    _check_scale(table, k - 1)
    hits = 0
    for _ in range(n):
        seg = sample_mk_block(table, k - 1, rng, with_opening=False).segment
        if len(seg) >= ell_hi and np.all(seg[-ell_hi:-1] == 1):
            hits += 1
    p = hits / n
    return p, (p * (1.0 - p) / n) ** 0.5


def contains_interior_marker(segment, ell: int) -> bool:
    """True if the marker occurs anywhere in `segment` other than as its
    final suffix (segments drawn from the block measure never do)."""
    seg = np.asarray(segment, dtype=np.int8)
    minus = np.flatnonzero(seg < 0)
    if len(minus) == 0:
        return False
    runs = np.diff(minus, prepend=-1) - 1
    ends = minus[runs >= ell - 1]
    return bool(len(ends) and (len(ends) > 1 or ends[0] != len(seg) - 1))
