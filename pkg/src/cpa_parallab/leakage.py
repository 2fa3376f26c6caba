"""Power model of a multiply-accumulate processing element (PE) array.

Each PE holds one accumulator register. A MAC step replaces the register
value z with z + w*x in wrapping two's-complement arithmetic. The power
drawn by the register write is modeled as the Hamming weight of the first
stored value (the register starts at zero) and as the Hamming distance
between consecutive values afterwards. The power of the whole array at one
step is the sum of the per-PE samples, optionally plus Gaussian noise.

Scalar operations (`pe_step`, `array_power`) are the reference semantics;
the `mac_chain_patterns` / `chain_leakage` kernels are the vectorized
equivalents used by trace generation and hypothesis evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import OperandRangeError

# A leakage sample is a plain int in [0, register_bits]: the HW or HD of a
# register transition.
LeakageSample = int


@dataclass(frozen=True)
class ArrayConfig:
    """Geometry, operand widths and noise regime of a PE array.

    ``signed_weights`` / ``signed_inputs`` select two's-complement operand
    ranges (e.g. [-128, 127]) instead of the default unsigned ranges
    ([0, 255]). Unsigned is the default: with non-negative products the
    power model's shift-aliasing identities (HW(2v) = HW(v)) are exact,
    which the first-multiplication analyses rely on.
    """

    n_pe: int
    weight_bits: int = 8
    input_bits: int = 8
    register_bits: int = 32
    noise_sigma: float = 0.0
    signed_weights: bool = False
    signed_inputs: bool = False

    def __post_init__(self):
        if self.n_pe < 1:
            raise ValueError(f"n_pe must be >= 1, got {self.n_pe}")
        if self.weight_bits < 1 or self.input_bits < 1:
            raise ValueError("weight_bits and input_bits must be >= 1")
        if not 1 <= self.register_bits <= 64:
            raise ValueError(f"register_bits must be in [1, 64], got {self.register_bits}")
        if self.noise_sigma < 0:
            raise ValueError(f"noise_sigma must be >= 0, got {self.noise_sigma}")

    @property
    def weight_range(self) -> tuple[int, int]:
        """Inclusive (lo, hi) of representable weights."""
        return _int_range(self.weight_bits, self.signed_weights)

    @property
    def input_range(self) -> tuple[int, int]:
        return _int_range(self.input_bits, self.signed_inputs)

    def to_dict(self) -> dict:
        return {
            "n_pe": self.n_pe,
            "weight_bits": self.weight_bits,
            "input_bits": self.input_bits,
            "register_bits": self.register_bits,
            "noise_sigma": self.noise_sigma,
            "signed_weights": self.signed_weights,
            "signed_inputs": self.signed_inputs,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArrayConfig":
        return cls(**{k: d[k] for k in (
            "n_pe", "weight_bits", "input_bits", "register_bits",
            "noise_sigma", "signed_weights", "signed_inputs") if k in d})


def _int_range(bits: int, signed: bool) -> tuple[int, int]:
    if signed:
        return -(1 << (bits - 1)), (1 << (bits - 1)) - 1
    return 0, (1 << bits) - 1


@dataclass(frozen=True)
class PEState:
    """Accumulator register of one PE.

    ``accumulator`` is the signed register value; ``tau`` counts MAC
    results already stored (0 before the first multiplication).
    """

    accumulator: int = 0
    tau: int = 0


def hamming_weight(v: int, register_bits: int = 32) -> LeakageSample:
    """Number of set bits in the two's-complement pattern of ``v``.

    Negative values count their sign-extension bits: HW(-1) = register_bits.
    """
    mask = (1 << register_bits) - 1
    return (int(v) & mask).bit_count()


def hamming_distance(prev: int, nxt: int, register_bits: int = 32) -> LeakageSample:
    """Number of differing bits between two register patterns."""
    mask = (1 << register_bits) - 1
    return ((int(prev) ^ int(nxt)) & mask).bit_count()


def _check_operand(name: str, value: int, lo: int, hi: int):
    if not lo <= value <= hi:
        raise OperandRangeError(
            f"{name}={value} outside the configured range [{lo}, {hi}]")


def pe_step(state: PEState, w: int, x: int, config: ArrayConfig) -> tuple[PEState, LeakageSample]:
    """Advance one PE by a single MAC and return its leakage sample.

    The new accumulator is old + w*x wrapped to ``register_bits``. The
    leakage is HW(new) for the first store (state.tau == 0) and
    HD(old, new) afterwards.
    """
    wlo, whi = config.weight_range
    xlo, xhi = config.input_range
    _check_operand("weight", w, wlo, whi)
    _check_operand("input", x, xlo, xhi)

    bits = config.register_bits
    mask = (1 << bits) - 1
    acc = (state.accumulator + w * x) & mask
    if state.tau == 0:
        sample = acc.bit_count()
    else:
        sample = ((state.accumulator ^ acc) & mask).bit_count()
    # canonical signed representation of the register
    if acc >= 1 << (bits - 1):
        acc -= 1 << bits
    return PEState(accumulator=acc, tau=state.tau + 1), sample


def array_power(transitions, noise_sigma: float = 0.0, rng: np.random.Generator | None = None,
                register_bits: int = 32) -> float:
    """Total array power for one step: sum of per-PE transition leakages.

    ``transitions`` is a sequence of (before, after) PEState pairs, all at
    the same tau. When ``noise_sigma`` > 0 a single Gaussian draw is added
    (the constant power term is fixed at zero).
    """
    transitions = list(transitions)
    if not transitions:
        raise ValueError("array_power needs at least one PE transition")
    taus = {before.tau for before, _ in transitions}
    if len(taus) != 1:
        raise ValueError(f"all PEs must be at the same tau, got {sorted(taus)}")
    total = 0
    for before, after in transitions:
        if before.tau == 0:
            total += hamming_weight(after.accumulator, register_bits)
        else:
            total += hamming_distance(before.accumulator, after.accumulator, register_bits)
    if noise_sigma > 0:
        if rng is None:
            rng = np.random.default_rng()
        return float(total + rng.normal(0.0, noise_sigma))
    return float(total)


# ---------------------------------------------------------------------------
# vectorized kernels
# ---------------------------------------------------------------------------

def to_patterns(values: np.ndarray, register_bits: int) -> np.ndarray:
    """Two's-complement bit patterns of integer values as uint64."""
    mask = np.uint64((1 << register_bits) - 1)
    return values.astype(np.int64).view(np.uint64) & mask


def popcount(patterns: np.ndarray) -> np.ndarray:
    """Set-bit count of uint64 patterns as uint8."""
    return np.bitwise_count(patterns)


def mac_chain_patterns(weights: np.ndarray, inputs: np.ndarray,
                       register_bits: int = 32) -> np.ndarray:
    """Accumulator patterns of a PE array over a full MAC chain.

    weights: [n_pe, n_tau] ints, inputs: [n_traces, n_tau] ints.
    Returns uint64 patterns [n_pe, n_traces, n_tau]; entry [p, t, k] is the
    register of PE p after step k of trace t, wrapped to register_bits.
    """
    mask = np.uint64((1 << register_bits) - 1)
    w = to_patterns(np.asarray(weights), register_bits)
    x = to_patterns(np.asarray(inputs), register_bits)
    # wrapping products, then wrapping running sums (mod 2^64 then masked,
    # which equals masking at every step)
    prod = (w[:, None, :] * x[None, :, :]) & mask
    return np.cumsum(prod, axis=2).astype(np.uint64) & mask


def chain_leakage(z: np.ndarray) -> np.ndarray:
    """Leakage samples of accumulator chains: HW at step 0, HD afterwards.

    z: uint64 patterns [..., n_tau]. Returns uint8 of the same shape.
    """
    out = np.empty(z.shape, dtype=np.uint8)
    out[..., 0] = popcount(z[..., 0])
    if z.shape[-1] > 1:
        out[..., 1:] = popcount(z[..., :-1] ^ z[..., 1:])
    return out
