"""Sequential recursive Green's function (RGF) selected inversion.

Four solvers share one pair of sweeps:

* the upward pass eliminates layers from the bottom, forming the Schur
  pivots and the left/right multipliers;
* the downward pass absorbs the multipliers from the top, producing only
  the in-band blocks of the inverse.

``rgf_tridiag`` is the block tridiagonal method, ``rgf_ndiag`` its
generalization to any bandwidth, ``rgf_fused`` the super-block baseline and
``rgf_extended`` the tridiagonal variant that also returns the first and
last block rows and columns of the inverse.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import BlockBandedMatrix, BlockLayout
from .exceptions import InvalidDimensionError
from .kernels import KernelCounters, Kernels, LUFactors

__all__ = [
    "RgfWorkspace",
    "RgfTrace",
    "ExtendedInverse",
    "rgf_upward",
    "rgf_downward",
    "rgf_tridiag",
    "rgf_ndiag",
    "rgf_fused",
    "rgf_extended",
    "fuse_layout",
    "fuse_matrix",
    "extended_extra_gemms",
]


@dataclass
class RgfTrace:
    """Optional instrumentation of a sweep.

    ``schur_updates`` holds ``(step, a, b)`` for each Schur block written
    while eliminating layer ``step``; ``inverse_reads`` holds every block
    of the partial inverse read by the downward pass.
    """

    schur_updates: list = field(default_factory=list)
    inverse_reads: list = field(default_factory=list)

    def max_schur_offset(self) -> int:
        return max((abs(a - b) for _, a, b in self.schur_updates), default=0)


@dataclass
class RgfWorkspace:
    """State left by the upward pass.

    Attributes
    ----------
    factors : list of LUFactors
        LU factors of the Schur pivot of each layer.
    right : dict
        ``(a, p) -> S[a, p] S[p, p]^{-1}`` for ``a < p`` (upper multipliers).
    left : dict
        ``(p, b) -> S[p, p]^{-1} S[p, b]`` for ``b < p`` (lower multipliers).
    schur : dict
        Final value of each Schur-updated diagonal block (the pivots).
    counters : KernelCounters
    """

    layout: BlockLayout
    factors: list
    right: dict
    left: dict
    schur: dict
    counters: KernelCounters


def _as_kernels(counters):
    if isinstance(counters, Kernels):
        return counters
    return Kernels(counters)


def _require_bandwidth(m: BlockBandedMatrix, allowed, name):
    if m.bandwidth not in allowed:
        raise InvalidDimensionError(f"{name} needs bandwidth in {sorted(allowed)}, got {m.bandwidth}")


def rgf_upward(m: BlockBandedMatrix, kernels=None, trace: RgfTrace | None = None,
               layer_offset: int = 0) -> RgfWorkspace:
    """Upward pass for any bandwidth.

    Eliminating layer ``p`` uses its ``k = min(w, p)`` upper neighbours:
    ``2k`` GETRS for the multipliers and ``k^2`` GEMMs for the Schur update.
    ``layer_offset`` is added to layer indices in singularity reports.
    """
    kern = _as_kernels(kernels)
    n, w = m.num_layers, m.bandwidth
    # only the trailing window of the Schur complement is ever rewritten
    S = {key: blk for key, blk in m.items()}
    factors: list = [None] * n
    right, left, pivots = {}, {}, {}

    pivots[n - 1] = S[n - 1, n - 1]
    factors[n - 1] = kern.lu_factor(S[n - 1, n - 1], layer=layer_offset + n - 1)
    for p in range(n - 1, 0, -1):
        f = factors[p]
        nbrs = range(max(0, p - w), p)
        for a in nbrs:
            right[a, p] = kern.solve_right(S[a, p], f)
        for b in nbrs:
            left[p, b] = kern.solve_left(f, S[p, b])
        for a in nbrs:
            for b in nbrs:
                S[a, b] = kern.gemm(-1.0, S[a, p], left[p, b], 1.0, S[a, b])
                if trace is not None:
                    trace.schur_updates.append((p, a, b))
        i = p - 1
        pivots[i] = S[i, i]
        factors[i] = kern.lu_factor(S[i, i], layer=layer_offset + i)
    return RgfWorkspace(m.layout, factors, right, left, pivots, kern.counters)


def rgf_downward(ws: RgfWorkspace, kernels=None, trace: RgfTrace | None = None) -> dict:
    """Downward pass; returns the in-band blocks of the inverse as a dict.

    For layer ``i`` with ``k = min(w, i)`` upper neighbours this spends
    ``2k^2`` GEMMs on the off-diagonal blocks and ``k`` GEMMs plus one
    GETRS on the diagonal block.
    """
    kern = _as_kernels(kernels)
    layout = ws.layout
    n, w = layout.num_layers, layout.bandwidth
    G = {(0, 0): kern.inverse(ws.factors[0])}

    def read(a, b):
        if trace is not None:
            trace.inverse_reads.append((a, b))
        return G[a, b]

    for i in range(1, n):
        lo = max(0, i - w)
        nbrs = range(lo, i)
        # row blocks above the diagonal, right to left
        for k in range(i - 1, lo - 1, -1):
            acc = None
            for b in nbrs:
                acc = kern.gemm(-1.0, read(k, b), ws.right[b, i], 1.0 if acc is not None else 0.0, acc)
            G[k, i] = acc
        # column blocks below the diagonal
        for k in range(i - 1, lo - 1, -1):
            acc = None
            for b in nbrs:
                acc = kern.gemm(-1.0, ws.left[i, b], read(b, k), 1.0 if acc is not None else 0.0, acc)
            G[i, k] = acc
        # diagonal: accumulate into a scratch block before storing
        diag = kern.inverse(ws.factors[i])
        for b in nbrs:
            diag = kern.gemm(-1.0, ws.left[i, b], G[b, i], 1.0, diag)
        G[i, i] = diag
    return G


def rgf_ndiag(m: BlockBandedMatrix, counters: KernelCounters | None = None,
              trace: RgfTrace | None = None):
    """Selected inverse of a block n-diagonal matrix.

    Parameters
    ----------
    m : BlockBandedMatrix
        Matrix of any bandwidth ``w``; its block LDU factorization must exist.
    counters : KernelCounters, optional
        Tally to accumulate into; a fresh one is used otherwise.
    trace : RgfTrace, optional
        Records Schur updates and inverse reads.

    Returns
    -------
    inverse : BlockBandedMatrix
        The in-band blocks of ``m^{-1}``.
    counters : KernelCounters
        ``n`` LU, ``n(2w+1) - w^2 - w`` GETRS and
        ``(3w^2 + w) n - 2w^3 - 2w^2`` GEMMs when ``n > w``.

    Raises
    ------
    SingularMatrixError
        If a Schur pivot is singular; ``err.layer`` names the layer.
    """
    kern = Kernels(counters)
    ws = rgf_upward(m, kern, trace)
    G = rgf_downward(ws, kern, trace)
    return BlockBandedMatrix(m.layout, G, copy=False), kern.counters


def rgf_tridiag(m: BlockBandedMatrix, counters: KernelCounters | None = None,
                trace: RgfTrace | None = None):
    """Selected inverse of a block tridiagonal matrix.

    Returns the block tridiagonal part of ``m^{-1}`` and the kernel counters
    (``n`` LU, ``3n - 2`` GETRS, ``4(n - 1)`` GEMMs).  A single-layer matrix
    (bandwidth 0) is accepted.
    """
    _require_bandwidth(m, {0, 1} if m.num_layers == 1 else {1}, "rgf_tridiag")
    kern = Kernels(counters)
    n = m.num_layers
    f = [None] * n
    upper, lower = {}, {}

    f[n - 1] = kern.lu_factor(m[n - 1, n - 1], layer=n - 1)
    for i in range(n - 2, -1, -1):
        upper[i, i + 1] = kern.solve_right(m[i, i + 1], f[i + 1])
        lower[i + 1, i] = kern.solve_left(f[i + 1], m[i + 1, i])
        pivot = kern.gemm(-1.0, m[i, i + 1], lower[i + 1, i], 1.0, m[i, i])
        if trace is not None:
            trace.schur_updates.append((i + 1, i, i))
        f[i] = kern.lu_factor(pivot, layer=i)

    G = {(0, 0): kern.inverse(f[0])}
    for i in range(1, n):
        G[i - 1, i] = kern.gemm(-1.0, G[i - 1, i - 1], upper[i - 1, i])
        G[i, i - 1] = kern.gemm(-1.0, lower[i, i - 1], G[i - 1, i - 1])
        G[i, i] = kern.gemm(-1.0, lower[i, i - 1], G[i - 1, i], 1.0, kern.inverse(f[i]))
        if trace is not None:
            trace.inverse_reads.extend([(i - 1, i - 1), (i - 1, i - 1), (i - 1, i)])
    return BlockBandedMatrix(m.layout, G, copy=False), kern.counters


# ---------------------------------------------------------------------------
# block fusing baseline


def fuse_layout(layout: BlockLayout, w: int | None = None) -> tuple:
    """Group every ``w`` consecutive layers into one super-layer.

    Returns the fused tridiagonal layout and the list of original layer
    ranges per super-layer.  The last super-layer may hold fewer layers.
    """
    w = layout.bandwidth if w is None else w
    n = layout.num_layers
    groups = [range(j * w, min((j + 1) * w, n)) for j in range(math.ceil(n / w))]
    sizes = tuple(sum(layout.block_sizes[a] for a in g) for g in groups)
    return BlockLayout(len(groups), sizes, min(1, len(groups) - 1)), groups


def fuse_matrix(m: BlockBandedMatrix) -> tuple:
    """Dense super-block tridiagonal form of ``m`` (zeros fill the gaps)."""
    flayout, groups = fuse_layout(m.layout)
    s = m.layout.block_sizes
    blocks = {}
    for A, B in flayout.band_keys():
        rows = [
            np.hstack([
                m.get(a, b) if m.get(a, b) is not None else np.zeros((s[a], s[b]), m.dtype)
                for b in groups[B]
            ])
            for a in groups[A]
        ]
        blocks[A, B] = np.vstack(rows)
    return BlockBandedMatrix(flayout, blocks, copy=False), groups


def rgf_fused(m: BlockBandedMatrix, counters: KernelCounters | None = None):
    """Selected inverse through block fusing.

    Every ``w`` layers are merged into a super-block of size ``w * b_s``,
    ``rgf_tridiag`` runs on the resulting ``ceil(n / w)`` super-layers, and
    the original band is cut back out of the fused result.  Counters are at
    super-block granularity.
    """
    if m.bandwidth <= 1:
        return rgf_tridiag(m, counters)
    fused, groups = fuse_matrix(m)
    G_fused, cnt = rgf_tridiag(fused, counters)
    layout = m.layout
    where = {}
    for A, g in enumerate(groups):
        local = 0
        for a in g:
            where[a] = (A, local)
            local += layout.block_sizes[a]
    s = layout.block_sizes

    def cut(a, b):
        A, ra = where[a]
        B, rb = where[b]
        return G_fused[A, B][ra:ra + s[a], rb:rb + s[b]].copy()

    return BlockBandedMatrix.from_function(layout, cut), cnt


# ---------------------------------------------------------------------------
# extended output for domain decomposition


@dataclass
class ExtendedInverse:
    """Block tridiagonal inverse plus its first/last block rows and columns.

    ``first_col[a]`` is block ``(a, 0)`` of the inverse, ``last_col[a]``
    block ``(a, n-1)``, ``first_row[b]`` block ``(0, b)`` and
    ``last_row[b]`` block ``(n-1, b)``.  When ``reads`` is a set, every
    block fetched through :meth:`get` is recorded in it.
    """

    core: BlockBandedMatrix
    first_col: list
    last_col: list
    first_row: list
    last_row: list
    extra_counters: KernelCounters = field(default_factory=KernelCounters)
    reads: set | None = None

    @property
    def num_layers(self) -> int:
        return self.core.num_layers

    def get(self, a: int, b: int) -> np.ndarray:
        n = self.num_layers
        if self.reads is not None:
            self.reads.add((a, b))
        blk = self.core.get(a, b)
        if blk is not None:
            return blk
        if b == 0:
            return self.first_col[a]
        if b == n - 1:
            return self.last_col[a]
        if a == 0:
            return self.first_row[b]
        if a == n - 1:
            return self.last_row[b]
        raise KeyError(f"block {(a, b)} is not part of the extended inverse")

    def mask(self) -> set:
        """All ``(a, b)`` blocks this object can provide."""
        n = self.num_layers
        keys = set(self.core.keys())
        for k in range(n):
            keys.update({(k, 0), (k, n - 1), (0, k), (n - 1, k)})
        return keys

    def halo_keys(self) -> set:
        """Blocks beyond the tridiagonal core."""
        return self.mask() - set(self.core.keys())


def extended_extra_gemms(n: int) -> int:
    """GEMMs spent by :func:`rgf_extended` beyond plain RGF on ``n`` layers."""
    if n <= 2:
        return 0
    first = 2 * (n - 2)
    if n == 3:
        last = 0
    elif n == 4:
        last = 1
    else:
        last = 2 * n - 6
    return first + 2 * last


def rgf_extended(m: BlockBandedMatrix, counters: KernelCounters | None = None,
                 layer_offset: int = 0):
    """Block tridiagonal selected inverse plus the halo rows and columns.

    After the ordinary sweeps, the first column and row follow from the
    recurrences ``G[a,0] = -L[a,a-1] G[a-1,0]`` and
    ``G[0,b] = -G[0,b-1] U[b-1,b]``; the last row and column are formed as
    products of multiplier chains with the diagonal inverse blocks.

    Returns
    -------
    ExtendedInverse
    KernelCounters
        Total counts; ``ExtendedInverse.extra_counters`` holds the part
        spent on halos (``extended_extra_gemms(n)`` GEMMs).
    """
    _require_bandwidth(m, {0, 1} if m.num_layers == 1 else {1}, "rgf_extended")
    kern = Kernels(counters)
    ws = rgf_upward(m, kern, layer_offset=layer_offset)
    G = rgf_downward(ws, kern)
    n = m.num_layers

    halo = Kernels()
    L, U = ws.left, ws.right
    first_col = [G.get((a, 0)) for a in range(n)]
    first_row = [G.get((0, b)) for b in range(n)]
    for a in range(2, n):
        first_col[a] = halo.gemm(-1.0, L[a, a - 1], first_col[a - 1])
        first_row[a] = halo.gemm(-1.0, first_row[a - 1], U[a - 1, a])

    last_row = [G.get((n - 1, b)) for b in range(n)]
    last_col = [G.get((a, n - 1)) for a in range(n)]
    if n >= 3:
        last_row[0] = first_col[n - 1]
        last_col[0] = first_row[n - 1]
    if n >= 4:
        j = n - 3
        last_row[j] = halo.gemm(-1.0, L[n - 1, n - 2], G[n - 2, j])
        last_col[j] = halo.gemm(-1.0, G[j, n - 2], U[n - 2, n - 1])
    if n >= 5:
        # chain_l = (-L[n-1,n-2]) ... (-L[b+1,b]);  G[n-1,b] = chain_l @ G[b,b]
        chain_l = halo.gemm(-1.0, -L[n - 1, n - 2], L[n - 2, n - 3])
        chain_u = halo.gemm(-1.0, U[n - 3, n - 2], -U[n - 2, n - 1])
        for b in range(n - 4, 0, -1):
            chain_l = halo.gemm(-1.0, chain_l, L[b + 1, b])
            chain_u = halo.gemm(-1.0, U[b, b + 1], chain_u)
            last_row[b] = halo.gemm(1.0, chain_l, G[b, b])
            last_col[b] = halo.gemm(1.0, G[b, b], chain_u)

    kern.counters.merge(halo.counters)
    core = BlockBandedMatrix(m.layout, G, copy=False)
    ext = ExtendedInverse(core, first_col, last_col, first_row, last_row,
                          extra_counters=halo.counters)
    return ext, kern.counters
