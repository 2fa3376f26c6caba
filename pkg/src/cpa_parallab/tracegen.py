"""Reproducible trace campaigns for PE arrays, plus the trace file format.

A *run* fixes one weight matrix and evaluates many traces with random
inputs; a *campaign* is a list of runs sharing one configuration. All
randomness derives from numpy ``SeedSequence`` spawn keys, a published
splittable scheme: run i of a campaign uses ``SeedSequence(master_seed,
spawn_key=(i,))``, and each run splits into (weights, inputs, noise)
sub-streams via ``spawn``. Per-trace input rows are the rows of one bulk
draw from the run's input stream, so results are bit-identical regardless
of evaluation order or thread count and any single run can be regenerated
in isolation.

Trace files ("CPAT") are little-endian binary with a JSON sidecar at
``<path>.json``; see `save_campaign` for the layout.
"""

from __future__ import annotations

import json
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (DimensionError, TraceFormatError, TraceTruncationError,
                     UnusableForCpaError)
from .leakage import ArrayConfig, chain_leakage, mac_chain_patterns

_MAGIC = b"CPAT"
_VERSION = 1
_HEADER = struct.Struct("<4sHHIIIB7s")
_FLAG_WEIGHTS_UNKNOWN = 0x0001
_FLAG_INPUTS_UNKNOWN = 0x0002
_DTYPE_F32 = 0


@dataclass(frozen=True)
class WeightDistribution:
    """How run weights are drawn: uniform, rounded normal, or from a file."""

    kind: str
    sigma: float | None = None
    path: str | None = None

    def __post_init__(self):
        if self.kind not in ("uniform", "normal", "file"):
            raise ValueError(f"unknown weight distribution kind {self.kind!r}")
        if self.kind == "normal" and (self.sigma is None or self.sigma <= 0):
            raise ValueError(f"normal distribution needs sigma > 0, got {self.sigma}")
        if self.kind == "file" and not self.path:
            raise ValueError("file distribution needs a path")

    @classmethod
    def uniform(cls) -> "WeightDistribution":
        return cls("uniform")

    @classmethod
    def normal(cls, sigma: float) -> "WeightDistribution":
        return cls("normal", sigma=sigma)

    @classmethod
    def from_file(cls, path) -> "WeightDistribution":
        return cls("file", path=str(path))

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.sigma is not None:
            d["sigma"] = self.sigma
        if self.path is not None:
            d["path"] = self.path
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "WeightDistribution":
        return cls(d["kind"], sigma=d.get("sigma"), path=d.get("path"))


@dataclass(eq=False)
class SimulationRun:
    """One weight draw plus its random-input traces.

    ``weights`` is None for imported measurements where the secret is
    unknown. ``traces`` has one row per trace; for simulated runs the
    columns are the MAC steps, for imports the optional ``window`` maps a
    step index to its sample column.
    """

    weights: np.ndarray | None          # [n_pe, n_tau] int32, or None
    inputs: np.ndarray                  # [n_traces, n_tau] int32
    traces: np.ndarray                  # [n_traces, n_samples] float32
    seed: int
    config: ArrayConfig
    window: dict[int, int] | None = None

    @property
    def n_traces(self) -> int:
        return self.traces.shape[0]

    @property
    def n_tau(self) -> int:
        return self.inputs.shape[1]

    @property
    def n_samples(self) -> int:
        return self.traces.shape[1]

    def sample_column(self, tau: int) -> int:
        """Trace column holding the leakage of MAC step ``tau``."""
        if self.window is not None:
            if tau not in self.window:
                raise KeyError(f"window map has no entry for tau={tau}")
            return self.window[tau]
        return tau

    def equals(self, other: "SimulationRun") -> bool:
        if self.weights is None and other.weights is None:
            w_eq = True
        elif self.weights is None or other.weights is None:
            w_eq = False
        else:
            w_eq = np.array_equal(self.weights, other.weights)
        return (w_eq
                and np.array_equal(self.inputs, other.inputs)
                and np.array_equal(self.traces, other.traces)
                and self.seed == other.seed
                and self.config == other.config
                and self.window == other.window)


@dataclass(eq=False)
class TraceCampaign:
    """A list of equally-shaped runs under one configuration."""

    runs: list[SimulationRun]
    config: ArrayConfig
    n_tau: int
    n_traces_per_run: int
    seed: int
    distribution: WeightDistribution | None = None

    @property
    def n_runs(self) -> int:
        return len(self.runs)

    def equals(self, other: "TraceCampaign") -> bool:
        return (self.config == other.config and self.n_tau == other.n_tau
                and self.n_traces_per_run == other.n_traces_per_run
                and self.seed == other.seed and self.n_runs == other.n_runs
                and all(a.equals(b) for a, b in zip(self.runs, other.runs)))


def _load_weight_file(path: str) -> np.ndarray:
    p = Path(path)
    if p.suffix == ".npy":
        values = np.load(p).ravel()
    elif p.suffix == ".json":
        values = np.asarray(json.loads(p.read_text()), dtype=np.float64).ravel()
    else:
        values = np.loadtxt(p, delimiter="," if p.suffix == ".csv" else None).ravel()
    return values


def sample_weights(dist: WeightDistribution, n_pe: int, n_tau: int,
                   rng: np.random.Generator, config: ArrayConfig) -> np.ndarray:
    """Draw an [n_pe, n_tau] weight matrix in the configured range.

    Normal weights are drawn with mean 0, rounded to the nearest integer
    and clamped to the signed range; in unsigned-weight configurations the
    clamped value is stored as its two's-complement bit pattern. File
    weights are consumed in row-major order and must fit the same rule.
    """
    lo, hi = config.weight_range
    n = n_pe * n_tau
    if dist.kind == "uniform":
        w = rng.integers(lo, hi + 1, size=(n_pe, n_tau), dtype=np.int64)
    elif dist.kind == "normal":
        slo, shi = -(1 << (config.weight_bits - 1)), (1 << (config.weight_bits - 1)) - 1
        w = np.clip(np.rint(rng.normal(0.0, dist.sigma, size=(n_pe, n_tau))), slo, shi)
        w = w.astype(np.int64)
        if not config.signed_weights:
            w = w % (1 << config.weight_bits)
    else:
        values = _load_weight_file(dist.path)
        if values.size < n:
            raise DimensionError(
                f"weight file {dist.path} holds {values.size} values, need {n}")
        w = values[:n].reshape(n_pe, n_tau)
        if not np.allclose(w, np.rint(w)):
            raise ValueError(f"weight file {dist.path} holds non-integer values")
        w = np.rint(w).astype(np.int64)
        slo, shi = -(1 << (config.weight_bits - 1)), (1 << config.weight_bits) - 1
        if w.min() < slo or w.max() > shi:
            raise DimensionError(
                f"weight file values outside representable {config.weight_bits}-bit range")
        w = w % (1 << config.weight_bits)
        if config.signed_weights:
            half = 1 << (config.weight_bits - 1)
            w = np.where(w >= half, w - (1 << config.weight_bits), w)
    return w.astype(np.int32)


def _rng_from(ss: np.random.SeedSequence) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(ss))


def derive_run_seed(master_seed: int, run_index: int) -> int:
    """Seed of a campaign's run, derived via SeedSequence spawn keys."""
    ss = np.random.SeedSequence(master_seed, spawn_key=(run_index,))
    return int(ss.generate_state(1, np.uint64)[0])


def generate_run(config: ArrayConfig, dist: WeightDistribution, n_tau: int,
                 n_traces: int, seed: int) -> SimulationRun:
    """Deterministically simulate one run: weights, inputs, array traces."""
    if n_traces < 2:
        raise ValueError(f"n_traces must be >= 2, got {n_traces}")
    if n_tau < 1:
        raise ValueError(f"n_tau must be >= 1, got {n_tau}")
    ss_w, ss_x, ss_n = np.random.SeedSequence(seed).spawn(3)
    weights = sample_weights(dist, config.n_pe, n_tau, _rng_from(ss_w), config)
    xlo, xhi = config.input_range
    inputs = _rng_from(ss_x).integers(
        xlo, xhi + 1, size=(n_traces, n_tau), dtype=np.int64).astype(np.int32)
    z = mac_chain_patterns(weights, inputs, config.register_bits)
    traces = chain_leakage(z).sum(axis=0, dtype=np.float32)
    if config.noise_sigma > 0:
        traces = traces + _rng_from(ss_n).normal(
            0.0, config.noise_sigma, size=traces.shape).astype(np.float32)
    return SimulationRun(weights=weights, inputs=inputs,
                         traces=traces.astype(np.float32), seed=int(seed),
                         config=config)


def generate_campaign(config: ArrayConfig, dist: WeightDistribution, n_tau: int,
                      n_traces: int, n_runs: int, master_seed: int,
                      threads: int = 1) -> TraceCampaign:
    """Simulate ``n_runs`` independent runs with derived per-run seeds."""
    if n_runs < 1:
        raise ValueError(f"n_runs must be >= 1, got {n_runs}")
    seeds = [derive_run_seed(master_seed, i) for i in range(n_runs)]

    def one(i):
        return generate_run(config, dist, n_tau, n_traces, seeds[i])

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            runs = list(pool.map(one, range(n_runs)))
    else:
        runs = [one(i) for i in range(n_runs)]
    return TraceCampaign(runs=runs, config=config, n_tau=n_tau,
                         n_traces_per_run=n_traces, seed=int(master_seed),
                         distribution=dist)


# ---------------------------------------------------------------------------
# trace file format
# ---------------------------------------------------------------------------

def _sidecar_path(path) -> Path:
    return Path(str(path) + ".json")


def save_campaign(campaign: TraceCampaign, path) -> None:
    """Write a campaign as a CPAT binary plus JSON sidecar.

    Layout: header ``magic "CPAT", u16 version=1, u16 flags, u32 n_runs,
    u32 n_traces, u32 n_samples, u8 dtype (0 = f32), 7 reserved bytes``,
    then per run a weights block (n_pe*n_tau i32, zeros when unknown), an
    inputs block (n_traces*n_tau i32) and a samples block
    (n_traces*n_samples f32), all little-endian row-major. The sidecar
    carries the config echo, seeds, distribution and optional window map.
    """
    path = Path(path)
    runs = campaign.runs
    if not runs:
        raise DimensionError("cannot save an empty campaign")
    n_traces = runs[0].n_traces
    n_samples = runs[0].n_samples
    n_tau = runs[0].n_tau
    for i, r in enumerate(runs):
        if (r.n_traces, r.n_samples, r.n_tau) != (n_traces, n_samples, n_tau):
            raise DimensionError(f"run {i} dimensions differ from run 0")
    flags = 0
    if runs[0].weights is None:
        if any(r.weights is not None for r in runs):
            raise DimensionError("weights must be known for all runs or none")
        flags |= _FLAG_WEIGHTS_UNKNOWN

    header = _HEADER.pack(_MAGIC, _VERSION, flags, len(runs), n_traces,
                          n_samples, _DTYPE_F32, b"\0" * 7)
    n_pe = campaign.config.n_pe
    with open(path, "wb") as f:
        f.write(header)
        for r in runs:
            w = (np.zeros((n_pe, n_tau), dtype=np.int32) if r.weights is None
                 else r.weights.astype("<i4"))
            f.write(w.astype("<i4").tobytes(order="C"))
            f.write(r.inputs.astype("<i4").tobytes(order="C"))
            f.write(r.traces.astype("<f4").tobytes(order="C"))

    window = runs[0].window
    meta = {
        "format": "cpat",
        "version": _VERSION,
        "config": campaign.config.to_dict(),
        "n_tau": n_tau,
        "n_traces_per_run": n_traces,
        "n_samples": n_samples,
        "n_runs": len(runs),
        "seed": campaign.seed,
        "run_seeds": [r.seed for r in runs],
        "distribution": campaign.distribution.to_dict() if campaign.distribution else None,
        "window": {str(k): v for k, v in window.items()} if window else None,
    }
    _sidecar_path(path).write_text(json.dumps(meta, indent=1))


def _read_header(raw: bytes, path) -> tuple[int, int, int, int]:
    if len(raw) < _HEADER.size:
        raise TraceTruncationError(f"{path}: file shorter than the fixed header")
    magic, version, flags, n_runs, n_traces, n_samples, dtype_code, _ = \
        _HEADER.unpack_from(raw, 0)
    if magic != _MAGIC:
        raise TraceFormatError(f"{path}: bad magic {magic!r}, expected {_MAGIC!r}")
    if version != _VERSION:
        raise TraceFormatError(f"{path}: unsupported version {version}")
    if dtype_code != _DTYPE_F32:
        raise TraceFormatError(f"{path}: unsupported sample dtype code {dtype_code}")
    return flags, n_runs, n_traces, n_samples


def _read_meta(meta_path) -> dict:
    meta_path = Path(meta_path)
    if not meta_path.exists():
        raise TraceFormatError(f"missing metadata sidecar {meta_path}")
    meta = json.loads(meta_path.read_text())
    if meta.get("format") != "cpat":
        raise TraceFormatError(f"{meta_path}: not a cpat sidecar")
    return meta


def _parse_runs(raw: bytes, meta: dict, path) -> tuple[list[SimulationRun], ArrayConfig]:
    flags, n_runs, n_traces, n_samples = _read_header(raw, path)
    config = ArrayConfig.from_dict(meta["config"])
    n_tau = int(meta["n_tau"])
    n_pe = config.n_pe
    if meta.get("n_runs") is not None and int(meta["n_runs"]) != n_runs:
        raise DimensionError(
            f"{path}: sidecar claims {meta['n_runs']} runs, header says {n_runs}")
    if meta.get("n_traces_per_run") is not None and int(meta["n_traces_per_run"]) != n_traces:
        raise DimensionError(
            f"{path}: sidecar claims {meta['n_traces_per_run']} traces, header says {n_traces}")

    w_item = n_pe * n_tau * 4
    x_item = n_traces * n_tau * 4
    s_item = n_traces * n_samples * 4
    per_run = w_item + x_item + s_item
    need = _HEADER.size + n_runs * per_run
    if len(raw) < need:
        raise TraceTruncationError(
            f"{path}: header claims {n_runs} runs of {per_run} bytes "
            f"({need} total) but the file holds {len(raw)} bytes")
    if len(raw) > need:
        raise TraceFormatError(f"{path}: {len(raw) - need} bytes of trailing data")

    weights_unknown = bool(flags & _FLAG_WEIGHTS_UNKNOWN)
    inputs_unknown = bool(flags & _FLAG_INPUTS_UNKNOWN)
    run_seeds = meta.get("run_seeds") or [0] * n_runs
    if len(run_seeds) != n_runs:
        raise DimensionError(f"{path}: sidecar lists {len(run_seeds)} run seeds "
                             f"for {n_runs} runs")
    window = meta.get("window")
    if window is not None:
        window = {int(k): int(v) for k, v in window.items()}
        for tau, col in window.items():
            if not 0 <= col < n_samples:
                raise DimensionError(
                    f"{path}: window maps tau={tau} to column {col}, "
                    f"but traces have {n_samples} samples")

    runs = []
    off = _HEADER.size
    for i in range(n_runs):
        w = np.frombuffer(raw, dtype="<i4", count=n_pe * n_tau, offset=off)
        w = w.reshape(n_pe, n_tau).astype(np.int32)
        off += w_item
        x = np.frombuffer(raw, dtype="<i4", count=n_traces * n_tau, offset=off)
        x = x.reshape(n_traces, n_tau).astype(np.int32)
        off += x_item
        s = np.frombuffer(raw, dtype="<f4", count=n_traces * n_samples, offset=off)
        s = s.reshape(n_traces, n_samples).astype(np.float32)
        off += s_item
        runs.append(SimulationRun(
            weights=None if weights_unknown else w, inputs=x, traces=s,
            seed=int(run_seeds[i]), config=config, window=window))
    return runs, config


def load_campaign(path) -> TraceCampaign:
    """Load a campaign written by `save_campaign`; exact round-trip."""
    path = Path(path)
    raw = path.read_bytes()
    meta = _read_meta(_sidecar_path(path))
    runs, config = _parse_runs(raw, meta, path)
    dist = meta.get("distribution")
    return TraceCampaign(
        runs=runs, config=config, n_tau=int(meta["n_tau"]),
        n_traces_per_run=runs[0].n_traces if runs else 0,
        seed=int(meta.get("seed") or 0),
        distribution=WeightDistribution.from_dict(dist) if dist else None)


def import_external_traces(trace_path, meta_path) -> SimulationRun:
    """Import an externally measured single-run trace file for offline CPA.

    The binary must follow the CPAT layout with exactly one run. Weights
    are typically unknown (flag bit set, block zeroed). Per-trace inputs
    come from the sidecar's ``inputs`` list when present, else from the
    binary inputs block; if neither is usable the import is rejected,
    since CPA cannot build hypotheses without the inputs. The sidecar's
    optional ``window`` maps each MAC step to its sample column.
    """
    raw = Path(trace_path).read_bytes()
    meta = _read_meta(meta_path)
    flags, n_runs, n_traces, _ = _read_header(raw, trace_path)
    if n_runs != 1:
        raise DimensionError(
            f"{trace_path}: import expects a single-run file, found {n_runs} runs")
    runs, _ = _parse_runs(raw, meta, trace_path)
    run = runs[0]

    meta_inputs = meta.get("inputs")
    if meta_inputs is not None:
        inputs = np.asarray(meta_inputs, dtype=np.int64)
        if inputs.ndim != 2 or inputs.shape[0] != n_traces:
            raise DimensionError(
                f"metadata inputs shape {inputs.shape} does not match "
                f"{n_traces} traces")
        run.inputs = inputs.astype(np.int32)
    elif flags & _FLAG_INPUTS_UNKNOWN:
        raise UnusableForCpaError(
            f"{trace_path}: inputs are flagged unknown and the metadata "
            "supplies none; traces are unusable for CPA")
    return run
