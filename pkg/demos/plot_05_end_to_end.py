"""
Whole pipeline on synthetic features
=====================================

Write a two-class Gaussian table with 88 features plus noisy copies at five
SNR levels for five noise types, then run prepare, train and evaluate and
print the table comparing the raw-feature baseline with EDRL-MEA.

The same run from a shell::

    edrl-mea prepare  --config run/config.json
    edrl-mea train    --config run/config.json
    edrl-mea evaluate --config run/config.json
"""

import tempfile
import time

from edrl_mea import PipelineConfig, cmd_evaluate, cmd_prepare, cmd_train
from edrl_mea.synthetic import write_experiment

directory = tempfile.mkdtemp()
config_path = write_experiment(directory, n_per_class=400, N=88, separation=2.0, seed=0,
                               forest={"n_estimators": [100, 200], "max_depth": [4, 8]})
cfg = PipelineConfig.load(config_path)

start = time.perf_counter()
print(cmd_prepare(cfg))
print(cmd_train(cfg))
reports = cmd_evaluate(cfg)
print(f"finished in {time.perf_counter() - start:.1f}s, outputs in {cfg.out}\n")
print(reports["intra"].render())
