"""Forward simulator of the process under the transition law.

A ChainState carries the last window_depth pairs plus everything emitted
so far in flat int8 buffers, with the marker-end index maintained
incrementally. Each step draws exactly two uniforms in fixed order
(y first, then x), applies the voting rule on the realized ȳ, and pushes
the new pair.

Boundary conditions: the x side of the pre-window fill is all +1
(PlusWall) or all -1 (MinusWall). The y side is a fixed fair-coin fill
drawn once from a constant-key stream and shared by every run, boundary,
and seed. A structureless fill (for example all +1) would start the
window with one gigantic truncated block whose voting sites are so old
that the age rule zeroes every bias, so the first steps would be fair
coins and the boundary could not select a phase; the typical fill gives
the wall the same marker statistics as the running process. The fill is
deterministic and documented here: it is the Gibbs boundary-condition
knob, and changing it changes which conditional law the run tracks.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .blockscan import WindowIndex
from .gfun import bias_for, select_voting_strips
from .params import ScaleTable
from .report import canonical_json, sha256_hex
from .rng import UniformStream, philox_generator

BOUNDARIES = ("PlusWall", "MinusWall")

# constant key for the shared y-side wall fill; never used for chain draws
_Y_FILL_KEY = 0x67636861696E2D79

_y_fill_cache: dict[int, np.ndarray] = {}


class InvalidConfig(ValueError):
    pass


class IoError(OSError):
    pass


def typical_y_fill(depth: int) -> np.ndarray:
    """The shared deterministic fair y-fill for the pre-window past."""
    fill = _y_fill_cache.get(depth)
    if fill is None:
        gen = philox_generator(_Y_FILL_KEY, 0)
        fill = (2 * gen.integers(0, 2, size=depth, dtype=np.int8) - 1).astype(np.int8)
        fill.setflags(write=False)
        _y_fill_cache[depth] = fill
    return fill


@dataclass
class StreamStats:
    """Streaming per-run tallies (updated every step)."""

    steps: int = 0
    y_plus: int = 0
    x_plus: int = 0
    capped: int = 0
    s_empty: int = 0
    bias_killed: int = 0  # age rule fired with a live voting set
    s_size_sum: int = 0
    upsilon_sum: float = 0.0
    k0_counts: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        d = {
            "steps": self.steps,
            "y_plus": self.y_plus,
            "x_plus": self.x_plus,
            "capped": self.capped,
            "s_empty": self.s_empty,
            "bias_killed": self.bias_killed,
            "s_size_sum": self.s_size_sum,
            "upsilon_sum": self.upsilon_sum,
            "k0_counts": {str(k): v for k, v in sorted(self.k0_counts.items())},
        }
        return d


class ChainState:
    """One running trajectory; strictly sequential."""

    def __init__(self, table: ScaleTable, boundary: str, seed: int,
                 stream_id: int = 0, zero_coin_sign: int = 1,
                 capacity_hint: int = 0):
        if boundary not in BOUNDARIES:
            raise InvalidConfig(f"boundary must be one of {BOUNDARIES}")
        if zero_coin_sign not in (1, -1):
            raise InvalidConfig("zero_coin_sign must be +1 or -1")
        self.table = table
        self.boundary = boundary
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        self.zero_coin_sign = zero_coin_sign
        W = table.config.window_depth
        self.W = W
        cap = W + max(int(capacity_hint), 1024)
        self.x_buf = np.empty(cap, dtype=np.int8)
        self.y_buf = np.empty(cap, dtype=np.int8)
        self.x_buf[:W] = 1 if boundary == "PlusWall" else -1
        self.y_buf[:W] = typical_y_fill(W)
        self.index = WindowIndex.scan(self.y_buf[:W], table, start=-W)
        self.stream = UniformStream(self.seed, self.stream_id)
        self.pos = 0
        self.stats = StreamStats()

    def _ensure_capacity(self, extra: int) -> None:
        need = self.W + self.pos + extra
        if need <= len(self.x_buf):
            return
        cap = max(need, 2 * len(self.x_buf))
        for name in ("x_buf", "y_buf"):
            old = getattr(self, name)
            new = np.empty(cap, dtype=np.int8)
            new[: self.W + self.pos] = old[: self.W + self.pos]
            setattr(self, name, new)

    def step(self):
        """Emit one (x0, y0) pair; returns (x0, y0, k0, upsilon, s_size)."""
        self._ensure_capacity(1)
        pos = self.pos
        W = self.W
        table = self.table
        index = self.index
        index.wall = pos - W
        u_y, u_x = self.stream.next_pair()
        y0 = 1 if u_y < 0.5 else -1
        self.y_buf[W + pos] = y0
        index.append(y0)
        k0, capped, strips, _dropped = select_voting_strips(index, strict=True)
        if strips:
            s_size = 0
            total = 0
            for s, e in strips:
                s_size += e - s
                total += int(self.x_buf[W + s: W + e].sum())
            ups = bias_for(table, k0, strips[0][0], pos)
            z = 1 if total > 0 else -1  # s_size odd: never zero
            x0 = z if u_x < 0.5 + ups else -z
        else:
            s_size = 0
            ups = bias_for(table, k0, None, pos)
            zcs = self.zero_coin_sign
            x0 = zcs if u_x < 0.5 else -zcs
        self.x_buf[W + pos] = x0
        self.pos = pos + 1

        st = self.stats
        st.steps += 1
        if y0 == 1:
            st.y_plus += 1
        if x0 == 1:
            st.x_plus += 1
        if capped:
            st.capped += 1
        if not strips:
            st.s_empty += 1
        elif ups == 0.0:
            st.bias_killed += 1
        st.s_size_sum += s_size
        st.upsilon_sum += ups
        st.k0_counts[k0] = st.k0_counts.get(k0, 0) + 1
        return x0, y0, k0, ups, s_size

    def run_steps(self, n: int, sinks=None) -> None:
        self._ensure_capacity(n)
        if sinks:
            try:
                for _ in range(n):
                    x0, y0, k0, ups, s_size = self.step()
                    rec = (self.pos - 1, x0, y0, k0, ups, s_size)
                    for sink in sinks:
                        sink(rec)
            except OSError as e:
                raise IoError(f"record sink failed: {e}") from e
        else:
            step = self.step
            for _ in range(n):
                step()

    def x_history(self) -> np.ndarray:
        """Emitted x symbols (positions 0..pos-1)."""
        return self.x_buf[self.W: self.W + self.pos]

    def y_history(self) -> np.ndarray:
        return self.y_buf[self.W: self.W + self.pos]

    def full_rows(self) -> tuple[np.ndarray, np.ndarray, int]:
        """Fill plus emitted rows and the start position of the fill."""
        n = self.W + self.pos
        return self.x_buf[:n], self.y_buf[:n], -self.W


def init(table: ScaleTable, boundary: str, seed: int, stream_id: int = 0,
         zero_coin_sign: int = 1, capacity_hint: int = 0) -> ChainState:
    return ChainState(table, boundary, seed, stream_id=stream_id,
                      zero_coin_sign=zero_coin_sign, capacity_hint=capacity_hint)


def config_digest(table: ScaleTable) -> str:
    return sha256_hex(canonical_json(table.config.as_dict()))


_MAGIC = b"GCHN"
_VERSION = 1
_BOUNDARY_CODE = {"PlusWall": 0, "MinusWall": 1}
_BOUNDARY_NAME = {v: k for k, v in _BOUNDARY_CODE.items()}


@dataclass(frozen=True)
class Trajectory:
    """Packed emitted symbols plus identifying metadata.

    Binary layout: 4-byte magic, version u8, raw 32-byte config digest,
    seed u64 LE, steps u64 LE, boundary u8, then for every 8 steps one
    x-byte and one y-byte (LSB first, +1 encoded as bit 1, zero padded).
    """

    x_bits: np.ndarray
    y_bits: np.ndarray
    steps: int
    seed: int
    boundary: str
    config_sha256: str

    @classmethod
    def from_rows(cls, x_row, y_row, seed: int, boundary: str,
                  config_sha256: str) -> "Trajectory":
        x = np.asarray(x_row, dtype=np.int8)
        y = np.asarray(y_row, dtype=np.int8)
        return cls(
            x_bits=np.packbits((x > 0).astype(np.uint8), bitorder="little"),
            y_bits=np.packbits((y > 0).astype(np.uint8), bitorder="little"),
            steps=len(x), seed=int(seed), boundary=boundary,
            config_sha256=config_sha256,
        )

    def x_row(self) -> np.ndarray:
        bits = np.unpackbits(self.x_bits, count=self.steps, bitorder="little")
        return (2 * bits.astype(np.int8) - 1).astype(np.int8)

    def y_row(self) -> np.ndarray:
        bits = np.unpackbits(self.y_bits, count=self.steps, bitorder="little")
        return (2 * bits.astype(np.int8) - 1).astype(np.int8)

    def to_bytes(self) -> bytes:
        header = _MAGIC + struct.pack(
            "<B32sQQB", _VERSION, bytes.fromhex(self.config_sha256),
            self.seed, self.steps, _BOUNDARY_CODE[self.boundary],
        )
        payload = np.empty(2 * len(self.x_bits), dtype=np.uint8)
        payload[0::2] = self.x_bits
        payload[1::2] = self.y_bits
        return header + payload.tobytes()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "Trajectory":
        if blob[:4] != _MAGIC:
            raise ValueError("not a trajectory file (bad magic)")
        version, digest, seed, steps, bcode = struct.unpack("<B32sQQB", blob[4:54])
        if version != _VERSION:
            raise ValueError(f"unsupported trajectory version {version}")
        payload = np.frombuffer(blob[54:], dtype=np.uint8)
        return cls(
            x_bits=payload[0::2].copy(), y_bits=payload[1::2].copy(),
            steps=steps, seed=seed, boundary=_BOUNDARY_NAME[bcode],
            config_sha256=digest.hex(),
        )

    def write(self, path) -> None:
        with open(path, "wb") as f:
            f.write(self.to_bytes())

    @classmethod
    def read(cls, path) -> "Trajectory":
        with open(path, "rb") as f:
            return cls.from_bytes(f.read())


def run(table: ScaleTable, boundary: str, seed: int, steps: int, sinks=None,
        stream_id: int = 0, zero_coin_sign: int = 1,
        with_trajectory: bool = True):
    """Simulate `steps` symbols; returns (Trajectory | None, StreamStats)."""
    if steps < 1:
        raise InvalidConfig("steps must be >= 1")
    state = init(table, boundary, seed, stream_id=stream_id,
                 zero_coin_sign=zero_coin_sign, capacity_hint=steps)
    state.run_steps(steps, sinks=sinks)
    traj = None
    if with_trajectory:
        traj = Trajectory.from_rows(
            state.x_history(), state.y_history(), seed, boundary,
            config_digest(table),
        )
    return traj, state.stats, state


def mirror_pair(table: ScaleTable, seed: int, steps: int, stream_id: int = 0):
    """Coupled PlusWall/MinusWall pair sharing one uniform stream.

    The minus member flips the fair tiebreak convention so that every
    x-decision is the exact negation of the plus member's.
    """
    plus = init(table, "PlusWall", seed, stream_id=stream_id,
                zero_coin_sign=1, capacity_hint=steps)
    minus = init(table, "MinusWall", seed, stream_id=stream_id,
                 zero_coin_sign=-1, capacity_hint=steps)
    plus.run_steps(steps)
    minus.run_steps(steps)
    return plus, minus
