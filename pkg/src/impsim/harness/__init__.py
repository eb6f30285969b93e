"""Configuration, manifests, synthetic data and pipeline orchestration."""
