"""Runtime and deterministic simulator for speculative tool-calling agents."""

__version__ = "0.1.0"
