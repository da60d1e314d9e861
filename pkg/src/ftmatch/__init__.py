"""Deterministic fault-tolerance laboratory for simulated message-passing programs."""

__version__ = "0.1.0"
