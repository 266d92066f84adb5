"""Deterministic named substreams derived from a single root seed.

Every random decision in the pipeline draws from a generator obtained via
``substream(root_seed, "stage", index, ...)`` so any stage can be re-run in
isolation and reproduce bit-identical results.
"""

import hashlib

import numpy as np


def _tag_to_int(tag) -> int:
    if isinstance(tag, (int, np.integer)):
        return int(tag) & 0xFFFFFFFF
    # stable across processes (never the builtin hash)
    digest = hashlib.sha256(str(tag).encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "little")


def seed_for(root_seed: int, *tags) -> int:
    """Derive a 32-bit child seed from the root seed and a tag path."""
    ss = np.random.SeedSequence([int(root_seed)] + [_tag_to_int(t) for t in tags])
    return int(ss.generate_state(1, np.uint32)[0])


def substream(root_seed: int, *tags) -> np.random.Generator:
    """Generator for the named substream ``tags`` under ``root_seed``."""
    ss = np.random.SeedSequence([int(root_seed)] + [_tag_to_int(t) for t in tags])
    return np.random.Generator(np.random.PCG64(ss))
