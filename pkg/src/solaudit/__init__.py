"""Deterministic Solidity auditing engine."""

__version__ = "0.1.0"
