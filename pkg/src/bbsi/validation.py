"""Input checks shared by the estimators and the command line."""

from __future__ import annotations

import numbers

import numpy as np

from .core import BlockBandedMatrix, BlockLayout, extract_bndiag
from .ddrgf import DomainPlan, parse_plan
from .exceptions import InvalidDimensionError, InvalidPlanError

__all__ = [
    "check_positive_int",
    "check_block_banded",
    "check_plan",
    "as_block_banded",
]


def check_positive_int(value, name: str, minimum: int = 1) -> int:
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise InvalidDimensionError(f"{name} must be an integer, got {value!r}")
    if value < minimum:
        raise InvalidDimensionError(f"{name} must be >= {minimum}, got {value}")
    return int(value)


def check_block_banded(m, bandwidth=None, max_bandwidth=None, uniform: bool = False) -> BlockBandedMatrix:
    """Ensure ``m`` is a :class:`BlockBandedMatrix` with the expected band.

    ``bandwidth`` demands an exact value (a set of values is also accepted);
    ``max_bandwidth`` an upper bound.  ``uniform`` requires equal block sizes.
    """
    if not isinstance(m, BlockBandedMatrix):
        raise TypeError(f"expected a BlockBandedMatrix, got {type(m).__name__}")
    w = m.bandwidth
    if bandwidth is not None:
        allowed = {bandwidth} if isinstance(bandwidth, numbers.Integral) else set(bandwidth)
        if w not in allowed:
            raise InvalidDimensionError(f"bandwidth {w} not in {sorted(allowed)}")
    if max_bandwidth is not None and w > max_bandwidth:
        raise InvalidDimensionError(f"bandwidth {w} exceeds {max_bandwidth}")
    if uniform and not m.layout.is_uniform:
        raise InvalidDimensionError("solver requires uniform block sizes")
    for _, blk in m.items():
        if not np.all(np.isfinite(blk)):
            raise InvalidDimensionError("matrix contains non-finite entries")
    return m


def as_block_banded(X, layout: BlockLayout | None = None) -> BlockBandedMatrix:
    """Accept a block banded matrix, or a dense square array with ``layout``."""
    if isinstance(X, BlockBandedMatrix):
        return X
    if layout is None:
        raise TypeError("dense input needs a layout")
    return extract_bndiag(np.asarray(X), layout)


def check_plan(plan, num_layers: int | None = None, n_threads: int = 1) -> DomainPlan:
    """Coerce ``plan`` (DomainPlan, ``"s2:4,1"`` or a sequence of s2) and validate it."""
    if isinstance(plan, DomainPlan):
        out = plan
    elif isinstance(plan, str):
        out = parse_plan(plan, n_threads)
    elif plan is None:
        out = DomainPlan((), n_threads)
    else:
        try:
            out = DomainPlan.from_s2(list(plan), n_threads)
        except TypeError as exc:
            raise InvalidPlanError(f"cannot interpret plan {plan!r}") from exc
    if num_layers is not None:
        out.validate(num_layers)
    return out
