"""Labeled datasets for the three benchmark tasks.

Every state receives its own seed derived from the recipe seed by
``SeedSequence(seed).spawn``, so a dataset is a pure function of its
arguments.
"""

from __future__ import annotations

import numpy as np

from .parity import parity_task_sample
from .rqc import RqcParams, rqc_snapshots
from .sets import Dataset, StateSamples
from .toric import ToricCodeParams, toric_windows


def _child_seeds(seed, n):
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n)]


def toric_dataset(classes: dict, *, set_size=64, torus=(12, 12), window=(6, 6),
                  train_samples=512, val_samples=128, seed=0) -> Dataset:
    """One train and one validation state per ``p_flip``; ``classes`` maps label -> p values.

    ``*_samples`` count torus samples; each yields ``(L_v/w_r)(L_h/w_c)`` windows.
    """
    points = [(label, p) for label, ps in sorted(classes.items()) for p in ps]
    seeds = _child_seeds(seed, 2 * len(points))
    states = []
    for i, (label, p) in enumerate(points):
        for j, (split, n) in enumerate((("train", train_samples), ("validation", val_samples))):
            s = seeds[2 * i + j]
            params = ToricCodeParams(*torus, p_flip=p, window=window, samples=n, seed=s)
            states.append(StateSamples(toric_windows(params), label, split,
                                       {"generator": "toric", **params.to_dict(), "instance": f"p{p}-{split}"}))
    return Dataset(states, set_size, {"generator": "toric", "classes": {str(k): list(v) for k, v in classes.items()},
                                      "torus": list(torus), "window": list(window), "seed": seed})


def toric_sweep(p_values, *, torus=(12, 12), window=(6, 6), samples=256, seed=0):
    """Unlabeled windows for each ``p_flip`` of a sweep: ``{p: windows}``."""
    seeds = _child_seeds(seed, len(p_values))
    return {p: toric_windows(ToricCodeParams(*torus, p_flip=p, window=window, samples=samples, seed=s))
            for p, s in zip(p_values, seeds)}


def parity_dataset(n_bits=6, k=4, *, grid=(2, 3), set_size=16, train_samples=8192,
                   val_samples=2048, mask=None, seed=0) -> Dataset:
    """Class A (label 0) against class B (label 1), reshaped onto ``grid``."""
    if grid[0] * grid[1] != n_bits:
        raise ValueError(f"grid {grid} does not hold {n_bits} bits")
    seeds = _child_seeds(seed, 4)
    states = []
    i = 0
    for label, cls in ((0, "A"), (1, "B")):
        for split, n in (("train", train_samples), ("validation", val_samples)):
            bits = parity_task_sample(n_bits, k, cls, n, seeds[i], mask)
            states.append(StateSamples(bits.reshape(n, *grid), label, split,
                                       {"generator": "parity", "n_bits": n_bits, "k": k, "class": cls,
                                        "seed": seeds[i], "instance": f"{cls}-{split}"}))
            i += 1
    return Dataset(states, set_size, {"generator": "parity", "n_bits": n_bits, "k": k,
                                      "grid": list(grid), "seed": seed})


def rqc_dataset(depths=(4, 20), *, rows=3, cols=4, n_train=35, n_val=0, n_test=15,
                samples=4000, set_size=1000, theta=0.5 * np.pi, phi=0.1 * np.pi, seed=0):
    """Depth pair classification: label 0 for ``depths[0]``, 1 for ``depths[1]``.

    Circuit instances are split at the instance level, never within one.
    ``fit`` needs a validation split, so training runs want ``n_val > 0``.
    Returns ``(dataset, states)`` where ``states`` maps instance name to state vector.
    """
    total = n_train + n_val + n_test
    states, vectors = [], {}
    seeds = _child_seeds(seed, 2 * len(depths) * total)
    splits = ["train"] * n_train + ["validation"] * n_val + ["test"] * n_test
    i = 0
    for label, d in enumerate(depths):
        for inst, split in enumerate(splits):
            params = RqcParams(rows, cols, d, circuit_seed=seeds[i], theta=theta, phi=phi,
                               samples=samples, sample_seed=seeds[i + 1])
            i += 2
            snaps, psi = rqc_snapshots(params)
            name = f"d{d}-c{inst}"
            vectors[name] = psi
            states.append(StateSamples(snaps, label, split, {"generator": "rqc", **params.to_dict(),
                                                              "instance": name}))
    return Dataset(states, set_size, {"generator": "rqc", "depths": list(depths), "rows": rows,
                                      "cols": cols, "seed": seed}), vectors
