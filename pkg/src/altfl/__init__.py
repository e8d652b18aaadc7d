"""Federated learning with interleaved privacy mechanisms (DP, selective HE, synthetic rounds)."""

__version__ = "0.1.0"
