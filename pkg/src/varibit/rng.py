"""Deterministic RNG substreams.

Every random draw in a training run comes from a substream derived from the
global seed plus a structural key (layer name, parameter name, step counter,
...). There is no shared mutable stream, which makes runs bit-reproducible
and lets a checkpoint resume exactly: the counters stored in the checkpoint
are the complete RNG state.
"""

import hashlib

import numpy as np

_MASK = (1 << 63) - 1


def _key_part(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part) & _MASK
    if isinstance(part, str):
        digest = hashlib.blake2b(part.encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "little") & _MASK
    raise TypeError(f"unsupported substream key part: {part!r}")


def substream(seed: int, *key) -> np.random.Generator:
    """Generator for the substream identified by ``(seed, *key)``.

    Key parts may be ints or strings; strings are hashed, so layer names of
    any length give stable, collision-resistant entropy.
    """
    entropy = [_key_part(seed)] + [_key_part(p) for p in key]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
