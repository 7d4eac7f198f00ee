"""Named random streams.

Every source of randomness derives its generator from the run seed plus a tuple of
tags naming the purpose (and the entity, relation or step it serves). Streams are
therefore independent of call order and of how work is split between threads.
"""

import hashlib
import numpy as np


def _tag_key(tag) -> int:
    if isinstance(tag, (int, np.integer)):
        return int(tag) & 0xFFFFFFFF
    digest = hashlib.blake2b(str(tag).encode("utf-8"), digest_size=4).digest()
    return int.from_bytes(digest, "little")


def derive_rng(seed: int, /, *tags) -> np.random.Generator:
    """A generator determined by *seed* and *tags*.

    ```python
    rng = derive_rng(7, "neighbors", 12)
    ```
    """
    sequence = np.random.SeedSequence(
        entropy=int(seed),
        spawn_key=tuple(_tag_key(t) for t in tags),
    )
    return np.random.default_rng(sequence)


__all__ = (
    "derive_rng",
)
