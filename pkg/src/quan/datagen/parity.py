"""Two bitstring ensembles that differ only in a k-body correlation.

Class A is uniform over all n-bit strings. Class B is uniform over strings
with even parity on a k-bit mask, so every statistic of fewer than k
masked bits agrees between the classes.
"""

from __future__ import annotations

import numpy as np


def default_mask(n_bits, k):
    return np.arange(k)


def parity_task_sample(n_bits, k, cls, samples, seed, mask=None) -> np.ndarray:
    """``uint8 [samples, n_bits]`` strings of class ``"A"`` or ``"B"``."""
    if not 3 <= k <= n_bits:
        raise ValueError(f"order k={k} must satisfy 3 <= k <= n_bits={n_bits}")
    if cls not in ("A", "B"):
        raise ValueError(f"class must be 'A' or 'B', got {cls!r}")
    mask = default_mask(n_bits, k) if mask is None else np.asarray(mask)
    if len(mask) != k or len(set(mask.tolist())) != k:
        raise ValueError("mask must list k distinct bit positions")
    rng = np.random.default_rng(seed)
    bits = rng.integers(0, 2, size=(samples, n_bits), dtype=np.uint8)
    if cls == "B":
        odd = bits[:, mask].sum(axis=1) % 2 == 1
        bits[odd, mask[-1]] ^= 1
    return bits


def masked_parity(bits, mask) -> np.ndarray:
    """Product of +-1 spins (bit 1 -> -1) over the mask."""
    return 1 - 2 * (np.asarray(bits, dtype=np.int64)[..., mask].sum(axis=-1) % 2)
