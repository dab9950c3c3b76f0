"""Fit a 1-D heteroscedastic random field with a small SNN.

Truth: y = sin(2x) + 0.1 (1 + x) z with z ~ N(0, 1) on x in [-1, 1].
"""
import numpy as np

from w2snn import snn, trainer
from w2snn.locality import Dataset

rng = np.random.default_rng(0)
xs = rng.uniform(-1, 1, size=(600, 1))
ys = np.sin(2 * xs) + 0.1 * (1 + xs) * rng.normal(size=(600, 1))

cfg = trainer.TrainConfig(snn=snn.SNNConfig(1, 1, (16, 16), "elu", "normal", init_scale=0.3, sigma_init=0.05),
                          learning_rate=0.01, epoch_max=400, n_batch=32, delta=0.1, N0=4, seed=1)
params, history = trainer.train(Dataset(xs, ys), cfg)
print(f"loss, first 20 epochs {history.losses[:20].mean():.4f}, last 20 {history.losses[-20:].mean():.4f}")

grid = np.array([[-0.8], [0.0], [0.8]])
for x, ens in zip(grid, trainer.evaluate(params, grid, K=2000, rng=2)):
    print(f"x = {x[0]:+.1f}: model mean {ens.mean():+.3f} sd {ens.std(ddof=1):.3f} | "
          f"truth mean {np.sin(2 * x[0]):+.3f} sd {0.1 * (1 + x[0]):.3f}")
