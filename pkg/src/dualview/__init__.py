"""Dual-view asynchronous actor-critic agent with a built-in micro environment."""

__version__ = "0.1.0"
