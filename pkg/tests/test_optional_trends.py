"""ODE reconstruction error trends over the noise dimension and scale.

Three points times three seeds is a loose check: it asks only for a positive
rank correlation between the setting and the final trajectory error.
"""
import numpy as np
import pytest
from scipy.stats import spearmanr

from test_acceptance import ODE_SUBSTEPS, slice_err_y
from w2snn import trainer
from w2snn.experiments import oscillator as osc

pytestmark = [pytest.mark.optional, pytest.mark.slow]


def final_err_y(seed, **ode):
    cfg = osc.ODEConfig(n_traj=100, substeps=ODE_SUBSTEPS, **ode)
    tc = trainer.TrainConfig(snn=osc.default_snn_config((60, 60)), epoch_max=200, delta=0.125, seed=seed)
    _, pred, _, truth = osc.train_ode_recon(cfg, tc)
    return slice_err_y(truth.states, pred.states)


@pytest.mark.parametrize("name,values", [("d", (1, 5, 20)), ("sigma", (0.5, 1.0, 2.0))])
def test_error_grows_with_noise(name, values):
    xs, ys = [], []
    for v in values:
        for seed in range(3):
            xs.append(v)
            ys.append(final_err_y(seed, **{name: v}))
    rho = spearmanr(xs, ys).statistic
    assert rho > 0, f"Spearman {rho:.2f} for error vs {name}: {np.round(ys, 4)}"
