# coding: utf-8

# # Group-by features fitted on training rows only
#
# A group-by-then-aggregate feature replaces each row by a statistic of a
# numeric column over its category. The statistic comes from the training
# rows, and a category never seen there maps to 0.

# In[1]:

import numpy as np

from synergyfe.featurelang import eval_expr, fit_expr, parse_expr, render_expr
from synergyfe.tabular import Table

train = Table.from_arrays({"city": ["oslo", "oslo", "rome", "rome", "rome"],
                           "price": [10.0, 14.0, 3.0, 5.0, 7.0]}, None, None)
test = Table.from_arrays({"city": ["rome", "lima", "oslo"],
                          "price": [100.0, 1.0, 0.0]}, None, None)


# In[2]:

expr = parse_expr("gbmean(col:city,col:price)")
fitted = fit_expr(expr, train)
print(render_expr(expr))
print("state:", fitted.to_dict()["state"])
print("train:", eval_expr(fitted, train))
print("test: ", eval_expr(fitted, test))


# The test prices are extreme, yet the fitted means did not move.

# In[3]:

nested = fit_expr(parse_expr("sub(col:price,gbmean(col:city,col:price))"), train)
print("deviation from city mean on test rows:", np.round(eval_expr(nested, test), 2))
