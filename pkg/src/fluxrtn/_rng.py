"""Deterministic random-stream management and ordered parallel mapping.

Every stochastic component draws from a Generator built out of
``SeedSequence((master_seed, stream_kind, *indices))``.  Substreams are
therefore a pure function of the master seed and a small integer address,
never of thread scheduling, so a run is reproducible bit for bit at any
thread count.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence

import numpy as np

from .errors import ParameterError

# Stream-kind tags.  These are part of the output format: changing any value
# changes every random number drawn downstream of it.
STREAM_BATH_RATES = 1
STREAM_REPETITION = 2
STREAM_READOUT = 3
STREAM_AMPLITUDES = 4
STREAM_TRACE = 5
STREAM_SWEEP_ROW = 6


def substream(master_seed: int, *ids: int) -> np.random.Generator:
    """Return a Generator for the substream addressed by ``ids``.

    Distinct addresses give statistically independent streams (SeedSequence
    guarantees this for distinct entropy tuples).
    """
    if not isinstance(master_seed, (int, np.integer)) or master_seed < 0:
        raise ParameterError(f"master seed must be a non-negative integer, got {master_seed!r}")
    for i in ids:
        if not isinstance(i, (int, np.integer)) or i < 0:
            raise ParameterError(f"stream ids must be non-negative integers, got {ids!r}")
    seq = np.random.SeedSequence((int(master_seed), *(int(i) for i in ids)))
    return np.random.Generator(np.random.PCG64(seq))


def indexed_map(fn: Callable[[int], object], n: int, threads: int = 1) -> list:
    """Evaluate ``fn(i)`` for ``i in range(n)`` and return results by index.

    With ``threads > 1`` the calls run on a thread pool, but the returned
    list order, and therefore any subsequent reduction over it, is identical
    to the serial order.  ``fn`` must not depend on shared mutable state.
    """
    if n < 0:
        raise ParameterError(f"n must be >= 0, got {n}")
    if threads < 1:
        raise ParameterError(f"threads must be >= 1, got {threads}")
    if threads == 1 or n <= 1:
        return [fn(i) for i in range(n)]
    out: list = [None] * n
    with ThreadPoolExecutor(max_workers=threads) as pool:
        for i, value in enumerate(pool.map(fn, range(n))):
            out[i] = value
    return out


def pairwise_mean(rows: Sequence[np.ndarray] | np.ndarray, axis: int = 0) -> np.ndarray:
    """Mean over realizations with a fixed, order-independent reduction tree.

    The rows are materialized into one array indexed by realization and
    reduced with a single numpy pairwise sum, so the result does not depend
    on which thread produced which row.
    """
    arr = np.asarray(rows)
    if arr.shape[axis] == 0:
        raise ParameterError("cannot average zero realizations")
    return arr.mean(axis=axis)
