# coding: utf-8

# # Searching for a hidden product feature
#
# The target is F1 * F2 plus a little noise. A linear model on the raw
# columns cannot see it; one engineered feature is enough.

# In[1]:

import numpy as np

from synergyfe.downstream import Evaluator, ModelSpec, holdout_score
from synergyfe.engine import EngineConfig, engineered_features, run
from synergyfe.featurelang import ColumnRef
from synergyfe.tabular import SplitSpec, Table, make_folds, train_test_split

rng = np.random.default_rng(1)
n, d = 1500, 6
X = rng.standard_normal((n, d))
cols = {f"F{i + 1}": X[:, i] for i in range(d)}
cols["y"] = X[:, 0] * X[:, 1] + 0.05 * rng.standard_normal(n)
table = Table.from_arrays(cols, "y", "regression")
train, test = train_test_split(table, SplitSpec(0.2, seed=0))


# In[2]:

model = ModelSpec("lasso", alpha=1e-3)
ev = Evaluator(model, make_folds(train.n_rows, 5, 0), "one_minus_rae")
report = run(train, EngineConfig(max_iterations=5), ev)

print("baseline CV", round(report.baseline_cv, 4))
for f in report.features:
    print(f"  + {f['expr']:<40} order {f['order']}  CV {f['cv_after']:.4f}")


# ## Held-out check
#
# Preprocessing and feature states are refitted on the training rows only.

# In[3]:

raw = [ColumnRef(c) for c in train.feature_names]
before = holdout_score(raw, train, test, model, "one_minus_rae")
after = holdout_score(raw + engineered_features(report), train, test, model, "one_minus_rae")
print("test 1-RAE before", round(before, 4), "after", round(after, 4))
