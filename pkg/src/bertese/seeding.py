"""Named derivation of per-stage random streams from one root seed."""

from __future__ import annotations

import hashlib

import numpy as np


def derived_seed(root_seed: int, name: str) -> np.random.SeedSequence:
    """A SeedSequence unique to (root_seed, name), stable across runs."""
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    return np.random.SeedSequence([int(root_seed), int.from_bytes(digest[:8], "little")])


def derived_rng(root_seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng(derived_seed(root_seed, name))
