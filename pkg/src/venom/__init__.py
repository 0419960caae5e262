"""venom: predict analytics-operator outputs over tabular data lakes.

Datasets are embedded into k-dimensional vectors by a transformer
variational autoencoder, the most similar datasets to a query are
selected in the embedding space, and a surrogate fit on their operator
outputs predicts the operator's value on the query without executing it.
"""

__version__ = "0.1.0"
