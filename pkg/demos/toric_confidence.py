"""
Confidence across the bit-flip threshold
========================================

Train a single-layer set transformer on windows deep in the topological
phase (p_flip <= 0.02) and deep in the trivial one (p_flip >= 0.30), then
sweep p_flip in between. The average confidence drops from 1 to 0 near the
decodability threshold. This takes a few minutes on one core.
"""

import numpy as np

from quan import analysis
from quan.datagen import partition_into_sets, toric_dataset, toric_sweep
from quan.model import ModelConfig, QuAN
from quan.training import TrainConfig, fit

N = 64
ds = toric_dataset({1: [0.0, 0.005, 0.01, 0.015, 0.02], 0: [0.30, 0.305, 0.31, 0.315, 0.32]},
                   set_size=N, train_samples=512, val_samples=128, seed=0)
model = QuAN(ModelConfig(grid=(6, 6), set_size=N, frontend="mlp", n_minisets=1, n_layers=1), seed=0)
fit(ds, model, TrainConfig(epochs=200, batch_size=32, init="xavier_normal"))

ps = np.round(np.arange(0.0, 0.2, 0.01), 3)
sweep = toric_sweep(ps, samples=1024, seed=7)
ybar = [analysis.average_confidence(model, partition_into_sets(sweep[p], N, 0))[0] for p in ps]
for p, y in zip(ps, ybar):
    print(f"p_flip={p:.2f}  y={y:.3f}")
print("crossover", analysis.crossing(ps, ybar), "width", analysis.crossover_width(ps, ybar))
