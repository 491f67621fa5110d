"""Embeddable transactional engine with workload-driven materialized views,
a single-lock hierarchical concurrency protocol, and an ordered key-value
store."""

from .db import Database
from .errors import SynergyError

__all__ = ["Database", "SynergyError"]
__version__ = "0.1.0"
