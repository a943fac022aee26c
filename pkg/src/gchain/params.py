"""Scale constants for the hierarchical marker construction.

A configuration fixes a roughness parameter ``epsilon``, a base scale ``K``
and a top scale ``k_max``. Scale ``k`` uses a marker word of length
``ell_k`` (all ``+1`` ending in a single ``-1``) whose expected recurrence
time along a fair coin stream is ``beta_k = 2**ell_k``. Everything derived
from these (sub-block counts, goodness thresholds, copy biases) is computed
here once, with exact integer arithmetic or extended-precision floats, so
no later module ever re-evaluates a real power.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import mpmath
import numpy as np

UINT64_MAX = 2**64 - 1

# Extra decimal digits used for real-power thresholds. 60 digits is far
# beyond the 80-bit minimum the contract asks for.
_POW_DPS = 60


class ParamError(ValueError):
    """A configuration cannot be turned into a usable scale table."""


class InvalidParameter(ParamError):
    """A field is outside its allowed range."""


class DegenerateScales(ParamError):
    """Marker lengths fail to increase strictly on the active range."""


class Overflow(ParamError):
    """A derived integer does not fit in 64 bits."""


class BiasOverflow(ParamError):
    """The base-scale copy bias exceeds the clamp and clamping is off."""


_ERROR_KINDS = {
    "InvalidParameter": InvalidParameter,
    "DegenerateScales": DegenerateScales,
    "Overflow": Overflow,
    "BiasOverflow": BiasOverflow,
}


@dataclass(frozen=True)
class SpecConfig:
    """User-facing knobs of the construction.

    ``window_depth`` is the length of past the engine keeps; it must cover
    beta_{k_max+2} so every bias decision can see far enough back.
    ``clamp_enabled`` opts into clamping the per-scale bias at
    ``upsilon_clamp`` instead of rejecting configurations whose base-scale
    bias would exceed it.
    """

    epsilon: float
    K: int
    k_max: int
    window_depth: int
    upsilon_clamp: float = 0.4
    clamp_enabled: bool = False

    def as_dict(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "K": self.K,
            "k_max": self.k_max,
            "window_depth": self.window_depth,
            "upsilon_clamp": self.upsilon_clamp,
            "clamp_enabled": self.clamp_enabled,
        }


@dataclass(frozen=True)
class Violation:
    kind: str
    scale: int | None
    message: str


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...]

    @property
    def ok(self) -> bool:
        return not self.violations

    def messages(self) -> list[str]:
        return [v.message for v in self.violations]


@dataclass(frozen=True)
class PatternIk:
    """The scale-k marker word: ell_k - 1 plus-ones followed by one minus-one."""

    k: int
    bits: tuple[int, ...]

    def as_array(self) -> np.ndarray:
        return np.array(self.bits, dtype=np.int8)


def marker_len(epsilon: float, k: int) -> int:
    """ceil((1 + epsilon)**k), evaluated exactly.

    epsilon enters as its exact binary64 value, so the power is a rational
    number and the ceiling has a single correct answer on every platform.
    """
    if k < 0:
        raise InvalidParameter("scale index must be nonnegative")
    ratio = Fraction(1) + Fraction(epsilon)
    return math.ceil(ratio**k)


def threshold_pow(base: int, exponent: float) -> int:
    """floor(base**exponent) with 60 significant decimal digits of margin.

    Integer exponents take an exact integer path. Non-integer powers are
    irrational for base >= 2, so the extended-precision value cannot sit on
    an integer; values within 2**-40 of an integer still round down, which
    is the documented (conservative) behavior.
    """
    if base < 1:
        raise InvalidParameter("base must be >= 1")
    if base == 1:
        return 1
    if float(exponent) == int(exponent):
        e = int(exponent)
        if e < 0:
            return 0
        out = base**e
        if out > UINT64_MAX:
            raise Overflow(f"{base}**{e} exceeds 64 bits")
        return out
    with mpmath.workdps(_POW_DPS):
        out = int(mpmath.floor(mpmath.power(base, mpmath.mpf(float(exponent)))))
    if out > UINT64_MAX:
        raise Overflow(f"floor({base}**{exponent}) exceeds 64 bits")
    return out


def _floor_pow_scaled(base: int, exponent: float, shift_bits: int) -> int:
    """floor(base**exponent * 2**-shift_bits) at the same precision."""
    with mpmath.workdps(_POW_DPS):
        v = mpmath.power(base, mpmath.mpf(float(exponent)))
        v = mpmath.ldexp(v, -shift_bits)
        return int(mpmath.floor(v))


def _bias(beta: int, epsilon: float) -> float:
    """beta**(-1/2 + epsilon) rounded once to binary64."""
    with mpmath.workdps(_POW_DPS):
        e = mpmath.mpf(float(epsilon)) - mpmath.mpf("0.5")
        return float(mpmath.power(beta, e))


@dataclass(frozen=True)
class ScaleTable:
    """Frozen per-scale constants for k in [1, k_max + 2].

    ``begin_count`` (defined for k > K) is how many scale-(k-1) sub-blocks
    form the old end of a scale-k block's beginning; at the base scale the
    beginning is ``begin_len_K`` sites instead. ``upsilon`` is the copy
    bias used when the deciding scale is k. Immutable after construction;
    safe to share between threads.
    """

    config: SpecConfig
    ell: dict[int, int] = field(repr=False)
    beta: dict[int, int] = field(repr=False)
    nu: dict[int, int] = field(repr=False)
    begin_len_K: int = 0
    begin_count: dict[int, int] = field(default_factory=dict, repr=False)
    good_len_bound: dict[int, int] = field(default_factory=dict, repr=False)
    good_open_bound: dict[int, int] = field(default_factory=dict, repr=False)
    upsilon: dict[int, float] = field(default_factory=dict, repr=False)

    @property
    def K(self) -> int:
        return self.config.K

    @property
    def k_max(self) -> int:
        return self.config.k_max

    def pattern(self, k: int) -> PatternIk:
        if k not in self.ell:
            raise ScaleOutOfRangeForTable(k, max(self.ell))
        n = self.ell[k]
        return PatternIk(k=k, bits=(1,) * (n - 1) + (-1,))

    def rows(self) -> list[dict]:
        """One dict per scale, in the column order the scales report uses."""
        out = []
        for k in sorted(self.ell):
            out.append(
                {
                    "k": k,
                    "ell": self.ell[k],
                    "beta": self.beta[k],
                    "nu": self.nu.get(k, ""),
                    "begin_count": self.begin_count.get(k, ""),
                    "good_len_bound": self.good_len_bound.get(k, ""),
                    "good_open_bound": self.good_open_bound.get(k, ""),
                    "upsilon": self.upsilon[k],
                }
            )
        return out


class ScaleOutOfRangeForTable(ParamError):
    def __init__(self, k: int, top: int):
        super().__init__(f"scale {k} outside the built range [1, {top}]")


def validate(config: SpecConfig) -> ValidationReport:
    """Check every configuration invariant without raising.

    The report lists each violation with the offending scale; it is empty
    exactly when build_scales succeeds.
    """
    bad: list[Violation] = []
    eps = config.epsilon
    if not (isinstance(eps, (int, float)) and 0.0 < eps < 0.5):
        bad.append(Violation("InvalidParameter", None, f"epsilon={eps!r} must lie strictly inside (0, 0.5)"))
        return ValidationReport(tuple(bad))
    if not (isinstance(config.K, int) and config.K >= 1):
        bad.append(Violation("InvalidParameter", None, f"K={config.K!r} must be an integer >= 1"))
        return ValidationReport(tuple(bad))
    if not (isinstance(config.k_max, int) and config.k_max >= config.K):
        bad.append(Violation("InvalidParameter", None, f"k_max={config.k_max!r} must be an integer >= K"))
        return ValidationReport(tuple(bad))
    if not (0.0 < config.upsilon_clamp <= 0.4):
        bad.append(Violation("InvalidParameter", None, f"upsilon_clamp={config.upsilon_clamp!r} must lie in (0, 0.4]"))
        return ValidationReport(tuple(bad))

    top = config.k_max + 2
    ell = {k: marker_len(eps, k) for k in range(1, top + 1)}
    for k in range(max(2, config.K + 1), top + 1):
        if ell[k] <= ell[k - 1]:
            bad.append(
                Violation(
                    "DegenerateScales",
                    k,
                    f"marker length stalls at scale {k}: ell_{k - 1} = ell_{k} = {ell[k]}",
                )
            )
    beta_top = 2 ** ell[top]
    if beta_top > UINT64_MAX:
        bad.append(Violation("Overflow", top, f"beta_{top} = 2**{ell[top]} exceeds 64 bits"))
    raw_bias = _bias(2 ** ell[config.K], eps)
    if raw_bias > config.upsilon_clamp and not config.clamp_enabled:
        bad.append(
            Violation(
                "BiasOverflow",
                config.K,
                f"base-scale bias {raw_bias:.6g} exceeds clamp {config.upsilon_clamp} "
                "and clamping is disabled",
            )
        )
    if config.window_depth < beta_top:
        bad.append(
            Violation(
                "InvalidParameter",
                top,
                f"window_depth={config.window_depth} is below beta_{top} = {beta_top}",
            )
        )
    return ValidationReport(tuple(bad))


def build_scales(config: SpecConfig) -> ScaleTable:
    """Populate the per-scale table, or raise the first violation's error."""
    report = validate(config)
    if not report.ok:
        v = report.violations[0]
        raise _ERROR_KINDS[v.kind](v.message)

    eps = config.epsilon
    top = config.k_max + 2
    ell = {k: marker_len(eps, k) for k in range(1, top + 1)}
    beta = {k: 2 ** ell[k] for k in ell}
    nu: dict[int, int] = {}
    for k in range(2, top + 1):
        q, r = divmod(beta[k], beta[k - 1])
        if r == 0:
            nu[k] = q
    begin_len_K = threshold_pow(beta[config.K], 1.0 - eps)
    begin_count = {k: threshold_pow(nu[k], 1.0 - eps) for k in range(config.K + 1, top + 1)}
    good_len_bound = {k: threshold_pow(beta[k], 1.0 + eps) for k in range(1, config.k_max + 1)}
    good_open_bound = {k: _floor_pow_scaled(beta[k], 1.0 - eps, k) for k in range(1, config.k_max + 1)}
    upsilon = {}
    for k in ell:
        raw = _bias(beta[k], eps)
        upsilon[k] = min(raw, config.upsilon_clamp) if config.clamp_enabled else raw
    return ScaleTable(
        config=config,
        ell=ell,
        beta=beta,
        nu=nu,
        begin_len_K=begin_len_K,
        begin_count=begin_count,
        good_len_bound=good_len_bound,
        good_open_bound=good_open_bound,
        upsilon=upsilon,
    )


PRESETS = {
    "A": SpecConfig(epsilon=0.3, K=7, k_max=10, window_depth=2**24),
    "B": SpecConfig(epsilon=0.25, K=8, k_max=12, window_depth=2**23),
}
