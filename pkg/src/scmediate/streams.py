"""Deterministic counter-based random streams.

Every random draw in the package flows through a Philox generator keyed by
``(seed, *tags)``. Streams for distinct keys are independent, so work can be
split across threads or processes in any order without changing results, and
rerunning with the same seed reproduces every draw bit for bit.
"""

from __future__ import annotations

import numpy as np

# Fixed role tags keep key spaces for unrelated purposes disjoint.
TAG_CV_FOLDS = 101
TAG_SUBJECTS = 201
TAG_GENE_PARAMS = 202
TAG_GENE_COUNTS = 203
TAG_NOISE = 204


def stream(seed: int, *tags: int) -> np.random.Generator:
    """Return an independent generator for the key ``(seed, *tags)``."""
    key = (int(seed),) + tuple(int(t) for t in tags)
    return np.random.Generator(np.random.Philox(key=np.random.SeedSequence(key).generate_state(2, np.uint64)))
