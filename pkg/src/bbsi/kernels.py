"""Dense kernel layer: GEMM, LU, GETRS, call counters and microbenchmarks.

Every solver in the package goes through the functions here so that the
number of kernel invocations can be tallied exactly.  The numerical work is
delegated to numpy/LAPACK; counting wraps the delegation boundary.
"""

from __future__ import annotations

import contextlib
import math
import time
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
from threadpoolctl import threadpool_limits

from .exceptions import InvalidDimensionError, SingularMatrixError

__all__ = [
    "KernelCounters",
    "LUFactors",
    "Kernels",
    "KernelRatios",
    "RooflinePoint",
    "gemm",
    "lu_factor",
    "solve_left",
    "solve_right",
    "pivot_threshold",
    "benchmark_kernels",
    "default_samples",
    "roofline",
    "kernel_threads",
]


@dataclass
class KernelCounters:
    """Exact tallies of kernel invocations."""

    n_gemm: int = 0
    n_lu: int = 0
    n_getrs: int = 0

    def __add__(self, other: "KernelCounters") -> "KernelCounters":
        return KernelCounters(
            self.n_gemm + other.n_gemm,
            self.n_lu + other.n_lu,
            self.n_getrs + other.n_getrs,
        )

    def merge(self, other: "KernelCounters") -> "KernelCounters":
        """Add ``other`` into ``self`` in place and return ``self``."""
        self.n_gemm += other.n_gemm
        self.n_lu += other.n_lu
        self.n_getrs += other.n_getrs
        return self

    def as_tuple(self) -> tuple[int, int, int]:
        """Return ``(n_lu, n_getrs, n_gemm)``."""
        return (self.n_lu, self.n_getrs, self.n_gemm)

    def as_dict(self) -> dict:
        return {"n_lu": self.n_lu, "n_getrs": self.n_getrs, "n_gemm": self.n_gemm}


@dataclass(frozen=True)
class LUFactors:
    """Partial-pivoted LU factors as returned by LAPACK ``getrf``.

    ``lu`` packs the unit lower factor below the diagonal and the upper
    factor on and above it; ``piv`` is the LAPACK pivot sequence.
    """

    lu: np.ndarray
    piv: np.ndarray

    @property
    def dimension(self) -> int:
        return self.lu.shape[0]

    def unpack(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Return ``(P, L, U)`` with ``P @ A == L @ U``."""
        n = self.dimension
        L = np.tril(self.lu, -1) + np.eye(n, dtype=self.lu.dtype)
        U = np.triu(self.lu)
        perm = np.arange(n)
        for i, p in enumerate(self.piv):
            perm[i], perm[p] = perm[p], perm[i]
        P = np.eye(n, dtype=self.lu.dtype)[perm]
        return P, L, U


def pivot_threshold(a: np.ndarray) -> float:
    """Magnitude below which a pivot of ``a``'s factorization is negligible."""
    if a.size == 0:
        return 0.0
    return float(np.finfo(a.dtype).eps * a.shape[0] * np.max(np.abs(a)))


def _check_2d(x, name):
    x = np.asarray(x)
    if x.ndim != 2:
        raise InvalidDimensionError(f"{name} must be 2-D, got shape {x.shape}")
    return x


def gemm(alpha, a, b, beta=0.0, c=None, counters: KernelCounters | None = None):
    """Return ``alpha * a @ b + beta * c``.

    ``c`` may be omitted when ``beta`` is zero.  Inputs are not modified.
    """
    a = _check_2d(a, "A")
    b = _check_2d(b, "B")
    if a.shape[1] != b.shape[0]:
        raise InvalidDimensionError(
            f"GEMM inner dimensions disagree: {a.shape} x {b.shape}"
        )
    if c is not None:
        c = _check_2d(c, "C")
        if c.shape != (a.shape[0], b.shape[1]):
            raise InvalidDimensionError(
                f"GEMM output shape {c.shape} != {(a.shape[0], b.shape[1])}"
            )
    elif beta != 0:
        raise InvalidDimensionError("C is required when beta != 0")
    if counters is not None:
        counters.n_gemm += 1

    out = a @ b
    if alpha != 1:
        out *= alpha
    if c is not None and beta != 0:
        if beta == 1:
            out += c
        else:
            out += beta * c
    return out


def lu_factor(a, counters: KernelCounters | None = None, layer=None) -> LUFactors:
    """Partial-pivoted LU factorization of a square matrix.

    Raises
    ------
    SingularMatrixError
        If a pivot is at or below ``eps * n * max|a|``.  ``layer`` is
        attached to the error for diagnostics.
    """
    a = _check_2d(a, "A")
    if a.shape[0] != a.shape[1]:
        raise InvalidDimensionError(f"LU needs a square matrix, got {a.shape}")
    if counters is not None:
        counters.n_lu += 1
    # getrf reports exact zero pivots through ``info`` instead of warning
    getrf, = sla.get_lapack_funcs(("getrf",), (a,))
    lu, piv, info = getrf(a, overwrite_a=False)
    if info < 0:
        raise ValueError(f"illegal argument {-info} to getrf")
    tol = pivot_threshold(a)
    pivots = np.abs(np.diagonal(lu))
    if a.size and (pivots.min() <= tol or not np.all(np.isfinite(pivots))):
        where = "" if layer is None else f" at layer {layer}"
        raise SingularMatrixError(
            f"negligible pivot {pivots.min():.3e} (threshold {tol:.3e}){where}",
            layer=layer,
        )
    return LUFactors(lu, piv)


def solve_left(f: LUFactors, b, counters: KernelCounters | None = None):
    """Return ``A^{-1} b`` using the factors of ``A`` (GETRS)."""
    b = _check_2d(b, "B")
    if b.shape[0] != f.dimension:
        raise InvalidDimensionError(
            f"solve_left: factor dimension {f.dimension} != rows(B) {b.shape[0]}"
        )
    if counters is not None:
        counters.n_getrs += 1
    return sla.lu_solve((f.lu, f.piv), b, check_finite=False)


def solve_right(b, f: LUFactors, counters: KernelCounters | None = None):
    """Return ``b A^{-1}`` through a transposed GETRS; counted as one GETRS."""
    b = _check_2d(b, "B")
    if b.shape[1] != f.dimension:
        raise InvalidDimensionError(
            f"solve_right: factor dimension {f.dimension} != cols(B) {b.shape[1]}"
        )
    if counters is not None:
        counters.n_getrs += 1
    # (A^T x = b^T)^T  ->  x^T = b A^{-1}
    return sla.lu_solve((f.lu, f.piv), b.T, trans=1, check_finite=False).T


class Kernels:
    """Kernel front end bound to one counter set.

    Each task of a parallel solve owns its own instance; counters are merged
    at the joins, so no counter is ever shared between threads.
    """

    def __init__(self, counters: KernelCounters | None = None):
        self.counters = KernelCounters() if counters is None else counters

    def gemm(self, alpha, a, b, beta=0.0, c=None):
        return gemm(alpha, a, b, beta, c, counters=self.counters)

    def lu_factor(self, a, layer=None):
        return lu_factor(a, counters=self.counters, layer=layer)

    def solve_left(self, f, b):
        return solve_left(f, b, counters=self.counters)

    def solve_right(self, b, f):
        return solve_right(b, f, counters=self.counters)

    def inverse(self, f: LUFactors):
        """Explicit inverse from factors; one GETRS with identity right-hand side."""
        eye = np.eye(f.dimension, dtype=np.result_type(f.lu.dtype, np.float64))
        return self.solve_left(f, eye)


@contextlib.contextmanager
def kernel_threads(n: int | None):
    """Limit the BLAS/LAPACK thread pool inside the block; ``None`` is a no-op."""
    if n is None:
        yield
        return
    with threadpool_limits(limits=int(n), user_api="blas"):
        yield


# ---------------------------------------------------------------------------
# microbenchmark


@dataclass(frozen=True)
class KernelRatios:
    """Measured GEMM time and LU/GETRS-to-GEMM time ratios at one block size."""

    block_size: int
    t_gemm: float
    r_lu: float
    r_getrs: float
    sample_count: int = 0

    def __post_init__(self):
        for name in ("t_gemm", "r_lu", "r_getrs"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and non-negative, got {v}")

    def to_dict(self) -> dict:
        return {
            "block_size": self.block_size,
            "t_gemm": self.t_gemm,
            "r_lu": self.r_lu,
            "r_getrs": self.r_getrs,
            "sample_count": self.sample_count,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "KernelRatios":
        return cls(
            int(d["block_size"]),
            float(d["t_gemm"]),
            float(d["r_lu"]),
            float(d["r_getrs"]),
            int(d.get("sample_count", 0)),
        )

    def csv_row(self) -> list:
        return [self.block_size, self.t_gemm * 1e6, self.r_lu, self.r_getrs, self.sample_count]


CSV_HEADER = ["block_size", "t_gemm_us", "r_lu", "r_getrs", "samples"]


def default_samples(n: int) -> int:
    """Sample counts used for the published ratio curves."""
    if n <= 512:
        return 1000
    if n <= 1024:
        return 100
    return 10


def _random_complex(rng, n, dominant=False):
    a = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    if dominant:
        a[np.diag_indices(n)] += 2.0 * np.abs(a).sum(axis=1)
    return a


def benchmark_kernels(block_size: int, samples: int | None = None, warmup: int = 3,
                      seed: int = 0) -> KernelRatios:
    """Time GEMM, LU and GETRS on fresh random ``block_size``-square matrices.

    Each kernel runs ``warmup`` untimed iterations followed by ``samples``
    timed ones; the arithmetic mean of the timed runs is used.  GETRS solves
    with ``block_size`` right-hand sides.
    """
    n = int(block_size)
    if n < 1:
        raise InvalidDimensionError("block_size must be >= 1")
    if samples is None:
        samples = default_samples(n)
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = np.random.default_rng(seed)

    t_gemm = t_lu = t_getrs = 0.0
    for it in range(warmup + samples):
        a = _random_complex(rng, n, dominant=True)
        b = _random_complex(rng, n)

        t0 = time.perf_counter()
        a @ b
        t1 = time.perf_counter()
        lu, piv = sla.lu_factor(a, check_finite=False)
        t2 = time.perf_counter()
        sla.lu_solve((lu, piv), b, check_finite=False)
        t3 = time.perf_counter()

        if it >= warmup:
            t_gemm += t1 - t0
            t_lu += t2 - t1
            t_getrs += t3 - t2

    t_gemm /= samples
    t_lu /= samples
    t_getrs /= samples
    # guard against clock resolution at tiny sizes
    t_gemm = max(t_gemm, 1e-9)
    return KernelRatios(n, t_gemm, t_lu / t_gemm, t_getrs / t_gemm, samples)


# ---------------------------------------------------------------------------
# roofline


@dataclass(frozen=True)
class RooflinePoint:
    """Roofline evaluation of one complex-double GEMM of dimension ``N``.

    ``work`` in FLOPs, ``traffic`` in bytes, ``intensity`` in FLOPs/byte,
    performance figures in GFLOP/s.
    """

    dimension: int
    work: float
    traffic: float
    intensity: float
    intensity_approx: float
    attainable: float
    measured: float
    peak: float
    bandwidth: float

    @property
    def ridge(self) -> float:
        """Intensity where the bandwidth roof meets the compute roof."""
        return self.peak / self.bandwidth

    def exceeds_roof(self, slack: float = 0.05) -> bool:
        """True when the measurement is above the attainable bound by more than ``slack``."""
        return self.measured > self.attainable * (1.0 + slack)


def roofline(N: int, peak_flops: float, bandwidth: float,
             measured_time: float) -> RooflinePoint:
    """Evaluate the streaming roofline model for an ``N x N`` complex GEMM.

    Work is ``8 N^2 (N - 2)`` FLOPs and traffic ``64 N^2`` bytes;
    ``peak_flops`` is in GFLOP/s, ``bandwidth`` in GB/s.
    """
    if N < 3:
        raise InvalidDimensionError("roofline needs N >= 3")
    if peak_flops <= 0 or bandwidth <= 0 or measured_time <= 0:
        raise ValueError("peak, bandwidth and time must be positive")
    work = 8.0 * N * N * (N - 2)
    traffic = 64.0 * N * N
    intensity = work / traffic
    attainable = min(peak_flops, intensity * bandwidth)
    measured = work / measured_time / 1e9
    return RooflinePoint(
        dimension=N,
        work=work,
        traffic=traffic,
        intensity=intensity,
        intensity_approx=N / 8.0,
        attainable=attainable,
        measured=measured,
        peak=peak_flops,
        bandwidth=bandwidth,
    )
