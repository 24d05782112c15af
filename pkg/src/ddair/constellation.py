"""Q-ary ASK/PAM alphabets, i.i.d. symbol blocks, sign-differential precoding
and two-fold zero-insertion upsampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SUPPORTED_ORDERS = (2, 4, 8, 16)
KINDS = ("ASK", "PAM")


@dataclass(frozen=True, eq=False)
class Constellation:
    kind: str
    order: int
    points: np.ndarray

    @property
    def bits_per_symbol(self) -> int:
        return int(np.log2(self.order))

    @property
    def name(self) -> str:
        return f"{self.order}-{self.kind}"

    def index_of(self, symbols) -> np.ndarray:
        """Map exact constellation levels to their indices 0..Q-1."""
        symbols = np.asarray(symbols, dtype=float)
        idx = np.searchsorted(self.points, symbols)
        idx = np.clip(idx, 0, self.order - 1)
        if not np.array_equal(self.points[idx], symbols):
            raise ValueError(f"symbols are not points of {self.name}")
        return idx

    def gray_labels(self) -> list[str]:
        """Binary-reflected Gray labels of the levels, in level order."""
        width = self.bits_per_symbol
        return [format(i ^ (i >> 1), f"0{width}b") for i in range(self.order)]

    def mean_power(self) -> float:
        return float(np.mean(self.points**2))

    def __eq__(self, other):
        if not isinstance(other, Constellation):
            return NotImplemented
        return self.kind == other.kind and self.order == other.order

    def __hash__(self):
        return hash((self.kind, self.order))


@dataclass(frozen=True, eq=False)
class SymbolBlock:
    symbols: np.ndarray
    constellation: Constellation
    source: str = "raw"

    def __post_init__(self):
        if len(self.symbols) < 1:
            raise ValueError("a symbol block needs n >= 1 symbols")
        if self.source not in ("raw", "precoded"):
            raise ValueError(f"unknown block source {self.source!r}")

    @property
    def n(self) -> int:
        return len(self.symbols)

    @property
    def indices(self) -> np.ndarray:
        return self.constellation.index_of(self.symbols)


@dataclass(frozen=True, eq=False)
class UpsampledSequence:
    samples: np.ndarray

    @property
    def n(self) -> int:
        return len(self.samples) // 2


def make_constellation(kind: str, Q: int) -> Constellation:
    """Q-PAM is {0, ..., Q-1}; Q-ASK is the odd bipolar set {-(Q-1), ..., Q-1}."""
    kind = str(kind).upper()
    if kind not in KINDS:
        raise ValueError(f"unsupported constellation kind {kind!r}; expected one of {KINDS}")
    if Q not in SUPPORTED_ORDERS:
        raise ValueError(f"unsupported order Q={Q}; expected one of {SUPPORTED_ORDERS}")
    if kind == "PAM":
        points = np.arange(Q, dtype=float)
    else:
        points = 2.0 * np.arange(Q) - (Q - 1)
    points.setflags(write=False)
    return Constellation(kind, Q, points)


def draw_symbols(constellation: Constellation, n: int, seed) -> SymbolBlock:
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    idx = rng.integers(constellation.order, size=n)
    return SymbolBlock(constellation.points[idx].copy(), constellation, "raw")


def differential_precode(block: SymbolBlock) -> SymbolBlock:
    """Encode ASK sign bits in sign transitions, s_i = s_{i-1} * x_i with s_0 = +1.

    PAM blocks pass through unchanged (only relabelled as precoded).
    """
    if block.source == "precoded":
        raise ValueError("block is already precoded")
    if block.constellation.kind == "PAM":
        return SymbolBlock(block.symbols.copy(), block.constellation, "precoded")
    signs = np.cumprod(np.sign(block.symbols))
    return SymbolBlock(signs * np.abs(block.symbols), block.constellation, "precoded")


def differential_decode(block: SymbolBlock) -> SymbolBlock:
    if block.source != "precoded":
        raise ValueError("only precoded blocks can be decoded")
    if block.constellation.kind == "PAM":
        return SymbolBlock(block.symbols.copy(), block.constellation, "raw")
    s = np.sign(block.symbols)
    prev = np.concatenate(([1.0], s[:-1]))
    return SymbolBlock(s * prev * np.abs(block.symbols), block.constellation, "raw")


def upsample(block) -> UpsampledSequence:
    """[X1, 0, X2, 0, ..., Xn, 0]."""
    symbols = block.symbols if isinstance(block, SymbolBlock) else np.asarray(block)
    out = np.zeros(2 * len(symbols), dtype=np.result_type(symbols, float))
    out[::2] = symbols
    return UpsampledSequence(out)
