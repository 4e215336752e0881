"""Deterministic federated-recommendation simulator: dual-branch clients
with proxy loss prediction, pluggable client selection (random, power-of-
choice, k-means, staleness-aware actor-critic), FedAvg aggregation, and a
top-K evaluation harness."""

__version__ = "0.1.0"
