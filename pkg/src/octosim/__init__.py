"""Cycle-approximate simulator and compiler for an in-network DL accelerator."""

__version__ = "0.1.0"
