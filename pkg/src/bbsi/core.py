"""Block banded matrices, layer permutations and the dense reference oracle.

Layer indices are 0-based throughout.  A block banded matrix with bandwidth
``w`` stores every block ``(a, b)`` with ``|a - b| <= w``; blocks are keyed
internally by ``(row, offset)`` with ``offset = b - a``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Iterator, Mapping

import numpy as np
import scipy.linalg as sla

from .exceptions import (
    InvalidDimensionError,
    InvalidPartitionError,
    SingularMatrixError,
)
from .kernels import pivot_threshold

__all__ = [
    "BlockLayout",
    "BlockBandedMatrix",
    "Permutation",
    "DomainDescriptor",
    "PartitionedMatrix",
    "make_layout",
    "random_spd_like",
    "to_dense",
    "extract_bndiag",
    "dense_inverse",
    "oracle_selected_inverse",
    "interleave_permutation",
    "permute_matrix",
]


@dataclass(frozen=True)
class BlockLayout:
    """Geometry of a block banded matrix.

    Parameters
    ----------
    num_layers : int
        Number of principal layers (block rows).
    block_sizes : tuple of int
        Dimension of each principal layer.
    bandwidth : int
        Number of block off-diagonals on each side.
    """

    num_layers: int
    block_sizes: tuple
    bandwidth: int

    def __post_init__(self):
        object.__setattr__(self, "block_sizes", tuple(int(s) for s in self.block_sizes))
        if self.num_layers < 1:
            raise InvalidDimensionError(f"num_layers must be >= 1, got {self.num_layers}")
        if len(self.block_sizes) != self.num_layers:
            raise InvalidDimensionError(
                f"{len(self.block_sizes)} block sizes given for {self.num_layers} layers"
            )
        if any(s < 1 for s in self.block_sizes):
            raise InvalidDimensionError("every block size must be >= 1")
        if self.bandwidth < 0:
            raise InvalidDimensionError("bandwidth must be >= 0")
        if self.bandwidth > max(self.num_layers - 1, 0):
            raise InvalidDimensionError(
                f"bandwidth {self.bandwidth} exceeds num_layers - 1 = {self.num_layers - 1}"
            )

    @property
    def total_dim(self) -> int:
        return sum(self.block_sizes)

    @property
    def offsets(self) -> tuple:
        """Start row of each layer in the dense realization (length ``num_layers + 1``)."""
        out = [0]
        for s in self.block_sizes:
            out.append(out[-1] + s)
        return tuple(out)

    @property
    def is_uniform(self) -> bool:
        return len(set(self.block_sizes)) == 1

    @property
    def block_size(self) -> int:
        """Common block size; raises for non-uniform layouts."""
        if not self.is_uniform:
            raise InvalidDimensionError("layout has non-uniform block sizes")
        return self.block_sizes[0]

    def in_band(self, a: int, b: int) -> bool:
        n = self.num_layers
        return 0 <= a < n and 0 <= b < n and abs(a - b) <= self.bandwidth

    def band_keys(self) -> Iterator[tuple]:
        """Yield ``(a, b)`` for every in-band block, row-major, column ascending."""
        w, n = self.bandwidth, self.num_layers
        for a in range(n):
            for b in range(max(0, a - w), min(n, a + w + 1)):
                yield a, b

    def with_bandwidth(self, w: int) -> "BlockLayout":
        return BlockLayout(self.num_layers, self.block_sizes, w)

    def to_dict(self) -> dict:
        return {
            "num_layers": self.num_layers,
            "block_sizes": list(self.block_sizes),
            "bandwidth": self.bandwidth,
        }


def make_layout(num_layers: int, block_size: int, bandwidth: int) -> BlockLayout:
    """Uniform layout with ``num_layers`` layers of size ``block_size``."""
    if block_size < 1:
        raise InvalidDimensionError("block_size must be >= 1")
    return BlockLayout(int(num_layers), (int(block_size),) * int(num_layers), int(bandwidth))


class BlockBandedMatrix:
    """Dense blocks on the ``2w + 1`` block diagonals of a square matrix.

    All in-band blocks are present (zero blocks stored explicitly).  Blocks
    are read-only once the matrix is built.

    Parameters
    ----------
    layout : BlockLayout
    blocks : mapping
        ``(a, b) -> ndarray`` for every in-band pair.
    copy : bool, default True
        Copy the block arrays before freezing them.
    """

    __slots__ = ("layout", "_blocks", "dtype")

    def __init__(self, layout: BlockLayout, blocks: Mapping, copy: bool = True):
        self.layout = layout
        sizes = layout.block_sizes
        stored = {}
        for key in layout.band_keys():
            if key not in blocks:
                raise InvalidDimensionError(f"missing in-band block {key}")
            blk = np.array(blocks[key], copy=True) if copy else np.asarray(blocks[key])
            a, b = key
            if blk.shape != (sizes[a], sizes[b]):
                raise InvalidDimensionError(
                    f"block {key} has shape {blk.shape}, expected {(sizes[a], sizes[b])}"
                )
            blk.setflags(write=False)
            stored[key] = blk
        extra = set(blocks) - set(stored)
        if extra:
            raise InvalidDimensionError(f"blocks outside the band: {sorted(extra)[:4]}")
        self._blocks = stored
        dtypes = [b.dtype for b in stored.values()]
        self.dtype = np.result_type(*dtypes) if dtypes else np.dtype(complex)

    # -- construction helpers -------------------------------------------------

    @classmethod
    def zeros(cls, layout: BlockLayout, dtype=complex) -> "BlockBandedMatrix":
        s = layout.block_sizes
        return cls(layout, {(a, b): np.zeros((s[a], s[b]), dtype) for a, b in layout.band_keys()},
                   copy=False)

    @classmethod
    def from_function(cls, layout: BlockLayout, fn: Callable) -> "BlockBandedMatrix":
        """Build from ``fn(a, b) -> block`` evaluated on every in-band pair."""
        return cls(layout, {k: fn(*k) for k in layout.band_keys()}, copy=False)

    @classmethod
    def identity(cls, layout: BlockLayout, dtype=complex) -> "BlockBandedMatrix":
        s = layout.block_sizes

        def blk(a, b):
            return np.eye(s[a], dtype=dtype) if a == b else np.zeros((s[a], s[b]), dtype)

        return cls.from_function(layout, blk)

    # -- access ---------------------------------------------------------------

    @property
    def num_layers(self) -> int:
        return self.layout.num_layers

    @property
    def bandwidth(self) -> int:
        return self.layout.bandwidth

    def __getitem__(self, key) -> np.ndarray:
        try:
            return self._blocks[key]
        except KeyError:
            raise KeyError(f"block {key} is outside the band of width {self.bandwidth}") from None

    def get(self, a: int, b: int, default=None):
        return self._blocks.get((a, b), default)

    def offset_block(self, a: int, i: int) -> np.ndarray:
        """Block at row ``a`` and block offset ``i`` (column ``a + i``)."""
        return self[a, a + i]

    def keys(self):
        return self._blocks.keys()

    def items(self):
        return self._blocks.items()

    def __iter__(self):
        return iter(self._blocks)

    def __len__(self):
        return len(self._blocks)

    def __repr__(self):
        L = self.layout
        return (f"BlockBandedMatrix(num_layers={L.num_layers}, bandwidth={L.bandwidth}, "
                f"block_sizes={L.block_sizes if not L.is_uniform else L.block_sizes[0]}, "
                f"dtype={self.dtype})")

    # -- comparison -----------------------------------------------------------

    def block_errors(self, other: "BlockBandedMatrix") -> dict:
        """Per-block relative Frobenius error ``|self - other| / max(|other|, tiny)``."""
        if other.layout.num_layers != self.layout.num_layers:
            raise InvalidDimensionError("layer counts differ")
        out = {}
        for key, blk in self._blocks.items():
            ref = other.get(*key)
            if ref is None:
                raise InvalidDimensionError(f"block {key} missing in the reference")
            den = np.linalg.norm(ref)
            num = np.linalg.norm(blk - ref)
            out[key] = num / den if den > 0 else num
        return out

    def max_block_error(self, other: "BlockBandedMatrix") -> float:
        errs = self.block_errors(other)
        return max(errs.values()) if errs else 0.0

    def worst_block(self, other: "BlockBandedMatrix") -> tuple:
        errs = self.block_errors(other)
        key = max(errs, key=errs.get)
        return key, errs[key]

    def equals(self, other: "BlockBandedMatrix") -> bool:
        """Exact equality of layout and all block values."""
        return (self.layout == other.layout
                and all(np.array_equal(b, other[k]) for k, b in self._blocks.items()))

    def is_hermitian(self, rtol: float = 0.0) -> bool:
        for (a, b), blk in self._blocks.items():
            mirror = self[b, a].conj().T
            scale = max(np.linalg.norm(blk), 1e-300)
            if np.linalg.norm(blk - mirror) > rtol * scale:
                return False
        return True


# ---------------------------------------------------------------------------
# synthetic problems and dense helpers


def random_spd_like(layout: BlockLayout, seed: int = 0, dominance: float = 2.0,
                    hermitian: bool = False, dtype=np.complex128) -> BlockBandedMatrix:
    """Random complex block banded matrix made diagonally dominant.

    Every in-band block gets standard complex normal entries.  Each diagonal
    entry ``d`` of row ``r`` is then shifted by
    ``dominance * (R_r + |d|)``, where ``R_r`` is the sum of magnitudes of
    the other entries in that row.  For ``dominance >= 1`` the result is
    strictly row diagonally dominant, so every leading block minor is
    nonsingular and the block LDU factorization exists.

    Parameters
    ----------
    hermitian : bool, default False
        Produce ``M[b, a] == M[a, b]^H`` (with Hermitian diagonal blocks).
    """
    if dominance <= 0:
        raise ValueError("dominance must be positive")
    rng = np.random.default_rng(seed)
    s = layout.block_sizes
    real_dtype = np.finfo(np.dtype(dtype)).dtype

    def draw(a, b):
        re = rng.standard_normal((s[a], s[b]))
        im = rng.standard_normal((s[a], s[b]))
        return (re + 1j * im).astype(dtype, copy=False)

    blocks = {}
    for a, b in layout.band_keys():
        if hermitian and b < a:
            continue
        blocks[a, b] = draw(a, b)
    if hermitian:
        for a, b in layout.band_keys():
            if b < a:
                blocks[a, b] = blocks[b, a].conj().T.copy()
            elif a == b:
                blocks[a, a] = 0.5 * (blocks[a, a] + blocks[a, a].conj().T)

    for a in range(layout.num_layers):
        row_sum = np.zeros(s[a], dtype=real_dtype)
        for b in range(max(0, a - layout.bandwidth), min(layout.num_layers, a + layout.bandwidth + 1)):
            row_sum += np.abs(blocks[a, b]).sum(axis=1)
        diag = np.diagonal(blocks[a, a]).copy()
        off = row_sum - np.abs(diag)
        shift = dominance * (off + np.abs(diag))
        blk = blocks[a, a]
        blk[np.diag_indices(s[a])] = diag + shift
    return BlockBandedMatrix(layout, blocks, copy=False)


def to_dense(m: BlockBandedMatrix) -> np.ndarray:
    """Dense realization; entries outside the band are exactly zero."""
    off = m.layout.offsets
    n = m.layout.total_dim
    d = np.zeros((n, n), dtype=m.dtype)
    for (a, b), blk in m.items():
        d[off[a]:off[a + 1], off[b]:off[b + 1]] = blk
    return d


def extract_bndiag(d: np.ndarray, layout: BlockLayout) -> BlockBandedMatrix:
    """Copy the in-band blocks of a dense matrix into a block banded matrix."""
    d = np.asarray(d)
    n = layout.total_dim
    if d.ndim != 2 or d.shape != (n, n):
        raise InvalidDimensionError(f"dense matrix has shape {d.shape}, layout needs {(n, n)}")
    off = layout.offsets
    return BlockBandedMatrix.from_function(
        layout, lambda a, b: d[off[a]:off[a + 1], off[b]:off[b + 1]].copy()
    )


def dense_inverse(d: np.ndarray) -> np.ndarray:
    """Inverse of a dense matrix through pivoted LU, with a negligible-pivot check."""
    d = np.asarray(d)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        lu, piv = sla.lu_factor(d, check_finite=False)
    tol = pivot_threshold(d)
    pivots = np.abs(np.diagonal(lu))
    if d.size and (pivots.min() <= tol or not np.all(np.isfinite(pivots))):
        raise SingularMatrixError(
            f"dense factorization hit a negligible pivot {pivots.min():.3e} (threshold {tol:.3e})"
        )
    return sla.lu_solve((lu, piv), np.eye(d.shape[0], dtype=lu.dtype), check_finite=False)


def oracle_selected_inverse(m: BlockBandedMatrix) -> BlockBandedMatrix:
    """Brute-force selected inverse: dense inversion followed by band extraction."""
    return extract_bndiag(dense_inverse(to_dense(m)), m.layout)


# ---------------------------------------------------------------------------
# permutations and domain decomposition


@dataclass(frozen=True)
class Permutation:
    """Reordering of layers.

    ``forward[k]`` is the original layer placed at new position ``k``;
    ``inverse[layer]`` is the new position of ``layer``.  ``split`` is the
    number of leading positions that form the first partition.
    """

    forward: tuple
    inverse: tuple = field(default=None)
    split: int = field(default=None)

    def __post_init__(self):
        fwd = tuple(int(x) for x in self.forward)
        n = len(fwd)
        if sorted(fwd) != list(range(n)):
            raise InvalidPartitionError("forward map is not a bijection on 0..n-1")
        inv = [0] * n
        for k, layer in enumerate(fwd):
            inv[layer] = k
        object.__setattr__(self, "forward", fwd)
        object.__setattr__(self, "inverse", tuple(inv))
        if self.split is None:
            object.__setattr__(self, "split", n)

    @classmethod
    def identity(cls, n: int) -> "Permutation":
        return cls(tuple(range(n)))

    def __len__(self):
        return len(self.forward)

    def compose(self, other: "Permutation") -> "Permutation":
        """Position map of applying ``other`` first, then ``self``."""
        return Permutation(tuple(other.forward[k] for k in self.forward))

    def is_identity(self) -> bool:
        return self.forward == tuple(range(len(self.forward)))


@dataclass(frozen=True)
class DomainDescriptor:
    """Layer ranges of the interleaved D2/D1 decomposition.

    ``d2[j]`` and ``d1[j]`` are half-open ``(start, stop)`` ranges; ``d2[j]``
    immediately precedes ``d1[j]`` physically.  A trailing ``d2`` range may
    be empty.
    """

    num_layers: int
    s1: int
    s2: int
    d1: tuple
    d2: tuple

    @property
    def n_tasks(self) -> int:
        return len(self.d1)

    @property
    def d1_layers(self) -> list:
        return [x for a, b in self.d1 for x in range(a, b)]

    @property
    def d2_layers(self) -> list:
        return [x for a, b in self.d2 for x in range(a, b)]


def interleave_permutation(layout, s1: int, s2: int):
    """Interleaved D2/D1 partition of the layers and its reordering.

    Layers are grouped as ``s2`` layers of D2 followed by ``s1`` layers of
    D1, repeated, starting with D2 and ending with D1.  When the layer
    count is not a multiple of ``s1 + s2`` the final D2 group is shortened
    (possibly to zero layers) so the sequence still ends with D1.

    Returns
    -------
    perm : Permutation
        All D1 layers first (physical order), then all D2 layers.
    domains : DomainDescriptor
    """
    if isinstance(layout, BlockLayout):
        if layout.bandwidth > 1:
            raise InvalidPartitionError("interleaving is defined for block tridiagonal layouts")
        n = layout.num_layers
    else:
        n = int(layout)
    if s1 < 1 or s2 < 1:
        raise InvalidPartitionError("s1 and s2 must be >= 1")
    if n < s1 + s2:
        raise InvalidPartitionError(f"{n} layers cannot hold one D2/D1 pair of {s2}+{s1}")
    period = s1 + s2
    n_tasks = math.ceil(n / period)
    d1, d2 = [], []
    for j in range(n_tasks):
        start = j * period
        rem = min(period, n - start)
        n1 = min(s1, rem)
        n2 = rem - n1
        d2.append((start, start + n2))
        d1.append((start + n2, start + n2 + n1))
    dom = DomainDescriptor(n, s1, s2, tuple(d1), tuple(d2))
    order = dom.d1_layers + dom.d2_layers
    return Permutation(tuple(order), split=len(dom.d1_layers)), dom


@dataclass
class PartitionedMatrix:
    """2x2 partitioned view of a permuted block tridiagonal matrix.

    Each part maps local ``(i, j)`` layer positions within its partition to
    the nonzero blocks; missing keys are zero blocks.
    """

    perm: Permutation
    layout: BlockLayout
    t11: dict
    t12: dict
    t21: dict
    t22: dict

    @property
    def n1(self) -> int:
        return self.perm.split

    @property
    def n2(self) -> int:
        return len(self.perm) - self.perm.split

    def block(self, p: int, q: int):
        """Block of the full permuted matrix at positions ``(p, q)`` or ``None``."""
        n1 = self.n1
        if p < n1 and q < n1:
            return self.t11.get((p, q))
        if p < n1:
            return self.t12.get((p, q - n1))
        if q < n1:
            return self.t21.get((p - n1, q))
        return self.t22.get((p - n1, q - n1))

    def unpermute(self) -> BlockBandedMatrix:
        """Undo the reordering."""
        fwd = self.perm.forward
        blocks = {}
        for p in range(len(fwd)):
            for q in range(len(fwd)):
                blk = self.block(p, q)
                if blk is not None:
                    blocks[fwd[p], fwd[q]] = blk
        return BlockBandedMatrix(self.layout, blocks)


def permute_matrix(m: BlockBandedMatrix, p: Permutation) -> PartitionedMatrix:
    """Reindex ``m`` by ``p`` and split it at ``p.split``."""
    if len(p) != m.num_layers:
        raise InvalidPartitionError("permutation size does not match the layer count")
    inv = p.inverse
    n1 = p.split
    parts = ({}, {}, {}, {})
    for (a, b), blk in m.items():
        pa, pb = inv[a], inv[b]
        first_a, first_b = pa < n1, pb < n1
        if first_a and first_b:
            parts[0][pa, pb] = blk
        elif first_a:
            parts[1][pa, pb - n1] = blk
        elif first_b:
            parts[2][pa - n1, pb] = blk
        else:
            parts[3][pa - n1, pb - n1] = blk
    return PartitionedMatrix(p, m.layout, *parts)
