"""Probe chat models for factual errors using derived facts and MTL queries."""
from __future__ import annotations

__version__ = "0.1.0"
