"""Domain-decomposition RGF (DDRGF) for block tridiagonal matrices.

Layers are split into alternating D2 sub-domains and D1 separator layers.
Each D2 sub-domain is inverted independently (in parallel) with the
extended RGF, the separators form a block tridiagonal Schur complement
that is solved recursively, and correction terms restore the tridiagonal
part of the full inverse.

All bookkeeping is done in physical layer indices; applying the
interleaving permutation and its inverse is therefore implicit.  The
Schur system is indexed by the position of each D1 layer in the
permuted order.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .core import (
    BlockBandedMatrix,
    BlockLayout,
    DomainDescriptor,
    PartitionedMatrix,
    interleave_permutation,
    permute_matrix,
)
from .exceptions import InvalidDimensionError, InvalidPlanError, SingularMatrixError
from .kernels import KernelCounters, Kernels, kernel_threads
from .rgf import ExtendedInverse, rgf_extended, rgf_tridiag

__all__ = [
    "DomainPlan",
    "SubdomainResult",
    "LevelTrace",
    "DdrgfTrace",
    "ddrgf",
    "invert_subdomains",
    "assemble_schur",
    "correction_offdiag",
    "correction_diag",
    "parse_plan",
]


@dataclass(frozen=True)
class DomainPlan:
    """Recursion plan for DDRGF.

    Parameters
    ----------
    levels : tuple of (s1, s2)
        Partition sizes per recursion level, outermost first.  ``s1`` must
        be 1.  An empty tuple means plain sequential RGF.
    n_threads : int
        Worker threads for the sub-domain tasks.
    terminal_threads : int
        BLAS threads granted to the sequential RGF on the deepest Schur
        system.
    """

    levels: tuple = ()
    n_threads: int = 1
    terminal_threads: int = 1

    def __post_init__(self):
        lv = tuple(tuple(int(v) for v in x) if np.ndim(x) else (1, int(x)) for x in self.levels)
        object.__setattr__(self, "levels", lv)
        for s1, s2 in lv:
            if s1 != 1:
                raise InvalidPlanError(f"s1 must be 1 at every level, got {s1}")
            if s2 < 1:
                raise InvalidPlanError(f"s2 must be >= 1, got {s2}")
        if self.n_threads < 1 or self.terminal_threads < 1:
            raise InvalidPlanError("thread counts must be >= 1")

    @classmethod
    def from_s2(cls, s2_seq, n_threads: int = 1, terminal_threads: int = 1) -> "DomainPlan":
        return cls(tuple((1, int(s)) for s in s2_seq), n_threads, terminal_threads)

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    @property
    def s2_sequence(self) -> tuple:
        return tuple(s2 for _, s2 in self.levels)

    @property
    def is_rgf(self) -> bool:
        return not self.levels

    def layer_counts(self, num_layers: int) -> list:
        """Layer count entering each level followed by the terminal count.

        Raises
        ------
        InvalidPlanError
            If a level receives fewer than ``s1 + s2`` layers.
        """
        counts = [num_layers]
        n = num_layers
        for k, (s1, s2) in enumerate(self.levels, start=1):
            if n < s1 + s2:
                raise InvalidPlanError(
                    f"level {k} gets {n} layers, fewer than s1 + s2 = {s1 + s2}"
                )
            n = -(-n // (s1 + s2)) * s1
            counts.append(n)
        return counts

    def validate(self, num_layers: int) -> "DomainPlan":
        self.layer_counts(num_layers)
        return self

    def spec_string(self) -> str:
        return "rgf" if self.is_rgf else "s2:" + ",".join(str(s) for s in self.s2_sequence)

    def to_dict(self) -> dict:
        return {
            "s2": list(self.s2_sequence),
            "n_levels": self.n_levels,
            "n_threads": self.n_threads,
            "terminal_threads": self.terminal_threads,
        }


def parse_plan(text: str, n_threads: int = 1, terminal_threads: int = 1) -> DomainPlan:
    """Parse ``"s2:4,1,1"`` (or ``"4,1,1"``, or ``"rgf"``) into a plan."""
    body = text.strip()
    if body.lower() in ("", "rgf", "none"):
        return DomainPlan((), n_threads, terminal_threads)
    if ":" in body:
        key, body = body.split(":", 1)
        if key.strip().lower() != "s2":
            raise InvalidPlanError(f"unknown plan key {key!r}")
    try:
        seq = [int(tok) for tok in body.split(",") if tok.strip()]
    except ValueError as exc:
        raise InvalidPlanError(f"malformed plan {text!r}") from exc
    if not seq:
        raise InvalidPlanError(f"plan {text!r} lists no s2 values")
    return DomainPlan.from_s2(seq, n_threads, terminal_threads)


@dataclass
class SubdomainResult:
    """Extended inverse of one D2 sub-domain and its coupling products.

    ``left``/``right`` are the physical D1 layers bordering the sub-domain
    (``left`` is ``None`` for the first one).  ``xt21[(a, q)]`` is
    ``X[a, c(q)] T[c(q), q]`` and ``t12x[(p, b)]`` is ``T[p, c(p)] X[c(p), b]``
    with ``c`` mapping a neighbour to the touching corner layer; ``a`` and
    ``b`` are local layer indices.
    """

    index: int
    start: int
    stop: int
    left: int | None
    right: int
    inverse: ExtendedInverse
    t12: dict
    t21: dict
    xt21: dict
    t12x: dict
    counters: KernelCounters

    @property
    def size(self) -> int:
        return self.stop - self.start

    @property
    def neighbours(self) -> tuple:
        return tuple(q for q in (self.left, self.right) if q is not None)

    def corner(self, q: int) -> int:
        """Local index of the sub-domain layer coupled to D1 layer ``q``."""
        return 0 if q == self.left else self.size - 1


@dataclass
class LevelTrace:
    level: int
    num_layers: int
    n_tasks: int
    schur_layers: int
    counters: KernelCounters = field(default_factory=KernelCounters)
    schur_keys: set = field(default_factory=set)
    reads: dict = field(default_factory=dict)


@dataclass
class DdrgfTrace:
    """Per-level instrumentation of a DDRGF run."""

    levels: list = field(default_factory=list)
    terminal_counters: KernelCounters = field(default_factory=KernelCounters)

    def schur_bandwidth_violations(self) -> int:
        return sum(1 for lv in self.levels for p, q in lv.schur_keys if abs(p - q) > 1)


# ---------------------------------------------------------------------------
# fork-join helpers


def _round_robin(items, n_threads, fn):
    """Apply ``fn`` to ``items`` with static round-robin assignment.

    Worker ``t`` handles items ``t, t + n, t + 2n, ...`` in order.  Results
    come back in item order.
    """
    items = list(items)
    if n_threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    n = min(n_threads, len(items))
    chunks = [items[t::n] for t in range(n)]
    with ThreadPoolExecutor(max_workers=n) as pool:
        done = list(pool.map(lambda chunk: [fn(x) for x in chunk], chunks))
    out = [None] * len(items)
    for t, res in enumerate(done):
        out[t::n] = res
    return out


def _submatrix(m: BlockBandedMatrix, start: int, stop: int) -> BlockBandedMatrix:
    n = stop - start
    layout = BlockLayout(n, m.layout.block_sizes[start:stop], min(1, n - 1))
    return BlockBandedMatrix(layout, {(a, b): m[start + a, start + b] for a, b in layout.band_keys()})


def _invert_one(m: BlockBandedMatrix, dom: DomainDescriptor, j: int, track: bool) -> SubdomainResult:
    start, stop = dom.d2[j]
    left = dom.d1[j - 1][1] - 1 if j > 0 else None
    right = dom.d1[j][0]
    kern = Kernels()
    sub = _submatrix(m, start, stop)
    try:
        X, _ = rgf_extended(sub, kern.counters, layer_offset=start)
    except SingularMatrixError as err:
        err.subdomain = j
        raise
    if track:
        X.reads = set()
    n = stop - start
    nbrs = [q for q in (left, right) if q is not None]
    corner = {left: 0, right: n - 1}
    t12 = {q: m[q, start + corner[q]] for q in nbrs}
    t21 = {q: m[start + corner[q], q] for q in nbrs}
    xt21, t12x = {}, {}
    for q in nbrs:
        c = corner[q]
        for a in range(n):
            xt21[a, q] = kern.gemm(1.0, X.get(a, c), t21[q])
    for p in nbrs:
        c = corner[p]
        for b in range(n):
            t12x[p, b] = kern.gemm(1.0, t12[p], X.get(c, b))
    return SubdomainResult(j, start, stop, left, right, X, t12, t21, xt21, t12x, kern.counters)


def invert_subdomains(m: BlockBandedMatrix, dom: DomainDescriptor, n_threads: int = 1,
                      track: bool = False) -> list:
    """Extended inversion of every non-empty D2 sub-domain, concurrently."""
    jobs = [j for j, (a, b) in enumerate(dom.d2) if b > a]
    return _round_robin(jobs, n_threads, lambda j: _invert_one(m, dom, j, track))


def _schur_contrib(res: SubdomainResult, pos: tuple, kern: Kernels) -> dict:
    out = {}
    for p in res.neighbours:
        c = res.corner(p)
        for q in res.neighbours:
            out[pos[p], pos[q]] = kern.gemm(1.0, res.t12[p], res.xt21[c, q])
    return out


def assemble_schur(parts: PartitionedMatrix, results: list, counters: KernelCounters | None = None,
                   n_threads: int = 1, touched: set | None = None) -> BlockBandedMatrix:
    """Schur complement ``T11 - T12 T22^{-1} T21`` over the D1 layers.

    Contributions are computed per sub-domain (optionally in parallel) and
    subtracted in sub-domain order, so the result does not depend on the
    thread count.  Long-range couplings between the two D1 neighbours of a
    sub-domain are kept.

    Returns
    -------
    BlockBandedMatrix
        Block tridiagonal matrix over the D1 layers in permuted order.
    """
    pos = parts.perm.inverse
    n1 = parts.n1
    sizes = tuple(parts.layout.block_sizes[x] for x in parts.perm.forward[:n1])
    layout = BlockLayout(n1, sizes, min(1, n1 - 1))
    kerns = [Kernels() for _ in results]
    contribs = _round_robin(range(len(results)), n_threads,
                            lambda i: _schur_contrib(results[i], pos, kerns[i]))
    S = {}
    for (p, q) in layout.band_keys():
        blk = parts.t11.get((p, q))
        S[p, q] = np.zeros((sizes[p], sizes[q]), dtype=complex) if blk is None else blk.copy()
    for part in contribs:
        for key, blk in part.items():
            if touched is not None:
                touched.add(key)
            if key not in S:
                raise InvalidDimensionError(f"Schur contribution at {key} lies outside the tridiagonal band")
            S[key] -= blk
    if counters is not None:
        for k in kerns:
            counters.merge(k.counters)
    return BlockBandedMatrix(layout, S, copy=False)


def _z_rows(res: SubdomainResult, sinv: BlockBandedMatrix, pos, kern: Kernels) -> dict:
    """``Z = -S^{-1} T12 X`` restricted to the rows of the sub-domain's neighbours."""
    nb = res.neighbours
    z = {}
    for p in nb:
        for b in range(res.size):
            acc = None
            for q in nb:
                acc = kern.gemm(-1.0, sinv[pos[p], pos[q]], res.t12x[q, b],
                                0.0 if acc is None else 1.0, acc)
            z[p, b] = acc
    return z


def _g21(res: SubdomainResult, sinv: BlockBandedMatrix, pos, kern: Kernels) -> dict:
    out = {}
    nb = res.neighbours
    for q in nb:
        a = res.corner(q)
        acc = None
        for p in nb:
            acc = kern.gemm(-1.0, res.xt21[a, p], sinv[pos[p], pos[q]],
                            0.0 if acc is None else 1.0, acc)
        out[res.start + a, q] = acc
    return out


def correction_offdiag(side: str, schur_inv: BlockBandedMatrix, results: list, pos,
                       counters: KernelCounters | None = None):
    """Off-diagonal corrections coupling D1 and D2.

    ``side="left"`` gives the blocks of ``-T22^{-1} T21 S^{-1}`` at the
    nonzero pattern of ``T21``; ``side="right"`` gives ``-S^{-1} T12 T22^{-1}``
    at the pattern of ``T12``.  Keys are physical ``(a, b)`` layer pairs.
    For ``"right"`` the full neighbour rows ``Z`` per sub-domain are also
    returned, since the diagonal correction reuses them.
    """
    kern = Kernels(counters)
    if side == "left":
        out = {}
        for res in results:
            out.update(_g21(res, schur_inv, pos, kern))
        return out
    if side == "right":
        out, zs = {}, []
        for res in results:
            z = _z_rows(res, schur_inv, pos, kern)
            zs.append(z)
            for q in res.neighbours:
                b = res.corner(q)
                out[q, res.start + b] = z[q, b]
        return out, zs
    raise ValueError(f"side must be 'left' or 'right', got {side!r}")


def _g22(res: SubdomainResult, sinv, pos, z: dict | None, kern: Kernels, grouping: str) -> dict:
    n, X, nb = res.size, res.inverse, res.neighbours
    out = {}
    keys = [(a, b) for a in range(n) for b in range(max(0, a - 1), min(n, a + 2))]
    if grouping == "right":
        if z is None:
            z = _z_rows(res, sinv, pos, kern)
        for a, b in keys:
            acc = X.get(a, b)
            for q in nb:
                acc = kern.gemm(-1.0, res.xt21[a, q], z[q, b], 1.0, acc)
            out[res.start + a, res.start + b] = acc
    elif grouping == "left":
        # W = (X T21) S^{-1}, then X + W (T12 X)
        w = {}
        for a in range(n):
            for q in nb:
                acc = None
                for p in nb:
                    acc = kern.gemm(1.0, res.xt21[a, p], sinv[pos[p], pos[q]],
                                    0.0 if acc is None else 1.0, acc)
                w[a, q] = acc
        for a, b in keys:
            acc = X.get(a, b)
            for q in nb:
                acc = kern.gemm(1.0, w[a, q], res.t12x[q, b], 1.0, acc)
            out[res.start + a, res.start + b] = acc
    else:
        raise ValueError(f"grouping must be 'left' or 'right', got {grouping!r}")
    return out


def correction_diag(schur_inv: BlockBandedMatrix, results: list, couplings=None, pos=None,
                    counters: KernelCounters | None = None, grouping: str = "right") -> dict:
    """Tridiagonal part of ``T22^{-1} + T22^{-1} T21 S^{-1} T12 T22^{-1}``.

    ``couplings`` are the ``Z`` rows returned by
    ``correction_offdiag("right", ...)``; they are recomputed when absent.
    The chain may be grouped from the right (reusing ``Z``) or the left.
    """
    kern = Kernels(counters)
    out = {}
    for i, res in enumerate(results):
        z = couplings[i] if couplings is not None else None
        out.update(_g22(res, schur_inv, pos, z, kern, grouping))
    return out


# ---------------------------------------------------------------------------
# driver


def _correct_one(res, sinv, pos, grouping):
    kern = Kernels()
    z = _z_rows(res, sinv, pos, kern)
    blocks = {}
    for q in res.neighbours:
        blocks[q, res.start + res.corner(q)] = z[q, res.corner(q)]
    blocks.update(_g21(res, sinv, pos, kern))
    blocks.update(_g22(res, sinv, pos, z if grouping == "right" else None, kern, grouping))
    return blocks, kern.counters


def _solve_level(m: BlockBandedMatrix, plan: DomainPlan, k: int, trace: DdrgfTrace | None,
                 grouping: str):
    if k == plan.n_levels:
        with kernel_threads(plan.terminal_threads):
            cnt = KernelCounters()
            out, _ = rgf_tridiag(m, cnt)
        if trace is not None:
            trace.terminal_counters.merge(cnt)
        return out, cnt

    s1, s2 = plan.levels[k]
    level = k + 1
    if m.num_layers < s1 + s2:
        raise InvalidPlanError(f"level {level} gets {m.num_layers} layers, fewer than s1 + s2 = {s1 + s2}")
    perm, dom = interleave_permutation(m.layout, s1, s2)
    parts = permute_matrix(m, perm)
    pos = perm.inverse
    track = trace is not None
    lt = LevelTrace(level, m.num_layers, dom.n_tasks, parts.n1) if track else None
    total = KernelCounters()

    try:
        with kernel_threads(1 if plan.n_threads > 1 else None):
            results = invert_subdomains(m, dom, plan.n_threads, track)
    except SingularMatrixError as err:
        err.level = err.level or level
        raise
    for res in results:
        total.merge(res.counters)

    S = assemble_schur(parts, results, total, plan.n_threads,
                       lt.schur_keys if track else None)
    if track:
        trace.levels.append(lt)

    try:
        sinv, sub_cnt = _solve_level(S, plan, k + 1, trace, grouping)
    except SingularMatrixError as err:
        if err.layer is not None:
            # map a Schur-local layer back to this level's physical layer
            err.layer = perm.forward[err.layer]
        raise

    with kernel_threads(1 if plan.n_threads > 1 else None):
        corr = _round_robin(results, plan.n_threads, lambda r: _correct_one(r, sinv, pos, grouping))

    blocks = {}
    for a, b in m.layout.band_keys():
        if pos[a] < parts.n1 and pos[b] < parts.n1:
            blocks[a, b] = sinv[pos[a], pos[b]]
    for part, cnt in corr:
        blocks.update(part)
        total.merge(cnt)
    if track:
        lt.counters = total + KernelCounters()
        lt.reads = {r.index: r.inverse.reads for r in results}
    total.merge(sub_cnt)
    return BlockBandedMatrix(m.layout, blocks, copy=False), total


def ddrgf(m: BlockBandedMatrix, plan: DomainPlan, counters: KernelCounters | None = None,
          trace: DdrgfTrace | None = None, grouping: str = "right"):
    """Selected inverse of a block tridiagonal matrix by domain decomposition.

    Parameters
    ----------
    m : BlockBandedMatrix
        Bandwidth-1 matrix.
    plan : DomainPlan
        Partition sizes per level and thread budget.  An empty plan runs
        sequential RGF.
    counters : KernelCounters, optional
        Accumulates kernel calls over all levels and tasks.
    trace : DdrgfTrace, optional
        Collects per-level counters, Schur touch patterns and halo reads.
    grouping : {"right", "left"}
        Association of the diagonal correction chain.

    Returns
    -------
    inverse : BlockBandedMatrix
    counters : KernelCounters

    Raises
    ------
    InvalidPlanError
        If some level would receive fewer than ``s1 + s2`` layers.
    SingularMatrixError
        With ``layer``, ``level`` and ``subdomain`` filled in where known.
    """
    if m.bandwidth > 1:
        raise InvalidDimensionError(f"ddrgf needs a block tridiagonal matrix, got bandwidth {m.bandwidth}")
    plan.validate(m.num_layers)
    out, cnt = _solve_level(m, plan, 0, trace, grouping)
    if counters is not None:
        counters.merge(cnt)
        cnt = counters
    return out, cnt
