"""Turn heterogeneous system logs into enriched provenance graphs."""

__version__ = "0.1.0"
