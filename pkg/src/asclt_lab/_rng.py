"""Counter-based random streams.

Every simulated path owns a Philox stream keyed by the 64-bit experiment seed
and positioned by the path's replication index in the high counter words, so a
path's draws depend only on ``(seed, index)`` and never on which worker thread
produced it or in which order.
"""

from __future__ import annotations

import numpy as np

from .errors import DomainError

_SEED_LIMIT = 1 << 64
_INDEX_SHIFT = 128


def check_seed(seed) -> int:
    seed = int(seed)
    if not 0 <= seed < _SEED_LIMIT:
        raise DomainError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return seed


def path_generator(seed: int, index: int = 0) -> np.random.Generator:
    """Generator for path ``index`` of the experiment keyed by ``seed``."""
    seed = check_seed(seed)
    if index < 0:
        raise DomainError(f"path index must be nonnegative, got {index}")
    bitgen = np.random.Philox(key=seed, counter=int(index) << _INDEX_SHIFT)
    return np.random.Generator(bitgen)
