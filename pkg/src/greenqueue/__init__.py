"""Decentralized power control for interference networks with hybrid AC/renewable supplies."""
from .engine import BACKEND, available_backends

__version__ = "0.1.0"
