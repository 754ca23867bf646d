"""Deterministic cyber-range harness simulator for security-tool evaluations."""

__version__ = "0.1.0"
