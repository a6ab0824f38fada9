"""Single-master-seed fan-out.

Every source of randomness in the package derives its own stream from the
master seed plus a string label, so adding or removing one consumer never
shifts the draws of another.
"""

import hashlib

import numpy as np


def derive_seed(master_seed: int, label: str) -> int:
    digest = hashlib.sha256(f"{master_seed}:{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def derive_rng(master_seed: int, label: str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master_seed, label))
