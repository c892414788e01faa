"""
Why accuracy and AUC flatter imbalanced models
==============================================

On a 90/10 split, always answering the majority class scores 90 percent
accuracy but only 50 percent LTR. Under a much steeper imbalance, a model
can rank classes well (high macro AUC) while still rarely predicting the
rare ones (low LTR).
"""

import numpy as np

from fedshift.data import SyntheticSpec, class_counts
from fedshift.federation import FederationConfig, run_experiment
from fedshift.metrics import cohens_d, imbalance_factor, ltr_accuracy, overall_accuracy
from fedshift.partition import PartitionPlan
from fedshift.strategies import StrategyConfig

y = np.array([0] * 90 + [1] * 10)
majority = np.zeros_like(y)
print(f"majority predictor: accuracy {overall_accuracy(majority, y):.2f}, LTR {ltr_accuracy(majority, y, 2):.2f}")

# seven classes with a geometric tail, largest/smallest around 70
probs = 70.0 ** (-np.arange(7) / 6)
spec = SyntheticSpec.build((probs / probs.sum()).tolist(), [0.25] * 4, n=8000, d=10, class_separation=2.0, seed=0)
res = run_experiment(spec, PartitionPlan(n_clients=4, n_tasks=4), StrategyConfig.parse("ERM"),
                     FederationConfig(), 0, model={"learning_rate": 0.1})
data = res.benchmark.dataset
print(f"imbalance factor {imbalance_factor(class_counts(data)):.1f}")
print(f"hold-out macro AUC {res.matrix.holdout_mean('auc'):.3f}  vs  LTR {res.matrix.holdout_mean('ltr'):.3f}")

# feature-level group difference, as a standardized mean difference
young, old = data.features[data.attributes == 0, 0], data.features[data.attributes == 3, 0]
print(f"Cohen's d of feature 0 between groups 0 and 3: {cohens_d(young, old):.2f}")
