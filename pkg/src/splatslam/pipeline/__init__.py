"""Datasets, orchestration, metrics and command line."""
