"""Grouping snapshots into labeled sets."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SPLITS = ("train", "validation", "test")


def partition_into_sets(snapshots, N, seed) -> np.ndarray:
    """Shuffle ``[M, ...]`` snapshots and cut ``floor(M / N)`` disjoint sets; leftovers are dropped."""
    snapshots = np.asarray(snapshots)
    if N < 1:
        raise ValueError("set size must be >= 1")
    M = len(snapshots)
    if N > M:
        raise ValueError(f"set size {N} exceeds the {M} available snapshots")
    rng = np.random.default_rng(seed)
    n_sets = M // N
    idx = rng.permutation(M)[: n_sets * N]
    return snapshots[idx].reshape(n_sets, N, *snapshots.shape[1:])


def filter_particle_number(snapshots, n) -> np.ndarray:
    """Keep snapshots whose bit sum equals ``n``."""
    snapshots = np.asarray(snapshots)
    counts = snapshots.reshape(len(snapshots), -1).sum(axis=1)
    return snapshots[counts == n]


@dataclass
class StateSamples:
    """All snapshots measured from one source state."""

    snapshots: np.ndarray
    label: int | None
    split: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ValueError(f"unknown split {self.split!r}")


@dataclass
class Dataset:
    states: list[StateSamples]
    set_size: int
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        ids = {}
        for s in self.states:
            key = s.params.get("instance")
            if key is None:
                continue
            if ids.setdefault(key, s.split) != s.split:
                raise ValueError(f"state instance {key!r} appears in more than one split")

    @property
    def grid(self):
        return tuple(self.states[0].snapshots.shape[1:])

    def split(self, name) -> list[StateSamples]:
        return [s for s in self.states if s.split == name]

    def sets(self, split, seed):
        """``(sets [S, N, ...], labels [S], state_index [S])`` for one split.

        Each state gets its own child seed, so the result depends only on
        ``seed`` and the state order.
        """
        chosen = [(i, s) for i, s in enumerate(self.states) if s.split == split]
        if isinstance(seed, np.random.SeedSequence):
            # spawn() advances its caller, so work on a copy
            root = np.random.SeedSequence(seed.entropy, spawn_key=seed.spawn_key)
        else:
            root = np.random.SeedSequence(seed)
        seeds = root.spawn(len(chosen)) if chosen else []
        X, y, owner = [], [], []
        for (i, s), ss in zip(chosen, seeds):
            if len(s.snapshots) < self.set_size:
                continue
            parts = partition_into_sets(s.snapshots, self.set_size, ss)
            X.append(parts)
            y.append(np.full(len(parts), -1 if s.label is None else s.label))
            owner.append(np.full(len(parts), i))
        if not X:
            return (np.zeros((0, self.set_size, *self.grid), dtype=np.uint8),
                    np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64))
        return np.concatenate(X), np.concatenate(y), np.concatenate(owner)
