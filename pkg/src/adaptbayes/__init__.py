"""Adaptive Bayesian frequency estimation: SMC inference, design heuristics,
CEM-trained neural-network heuristics and a Bayes-risk benchmark harness."""

__version__ = "0.1.0"
