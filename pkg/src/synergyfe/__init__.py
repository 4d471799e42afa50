"""Interaction-information-guided feature engineering for tabular data.

Modules
-------
tabular
    Tables, CSV loading, splits, folds, scaling and encoding.
infotheory
    Nearest-neighbour estimators of mutual and interaction information.
featurelang
    Engineered-feature expressions: operators, parsing, fit and evaluate.
downstream
    Linear models, metrics and leak-free cross-validation.
engine
    The greedy construction loop and the expand-reduce baseline.
cli
    Command-line front-end.
"""
__version__ = "0.1.0"
