"""Dropout regression on Boston housing with the repeated-split protocol.

Needs ``data/boston.csv``; run ``export_bundled_datasets()`` once (requires
mlxtend) to write it. Three splits keep the run under a minute.
"""
from dataclasses import replace

from alphabox.harness.config import ExperimentConfig
from alphabox.harness.data import data_dir, export_bundled_datasets, load_csv_regression
from alphabox.harness.experiments import uci_protocol

if not (data_dir() / "boston.csv").exists():
    export_bundled_datasets()

cfg = ExperimentConfig.load("configs/boston.json")
cfg = replace(cfg, split=replace(cfg.split, n_splits=3)).validate()
X, y = load_csv_regression(cfg.dataset.path)

for alpha in (0.0, 0.5):
    run = replace(cfg, objective=replace(cfg.objective, alpha=alpha))
    res = uci_protocol(X, y, run)
    print(f"alpha={alpha}: test NLL {res['test_nll']:.3f} +- {res['test_nll_se']:.3f}, "
          f"RMSE {res['test_rmse']:.3f} +- {res['test_rmse_se']:.3f}, "
          f"tau {[m['tau'] for m in res['per_split']]}")
