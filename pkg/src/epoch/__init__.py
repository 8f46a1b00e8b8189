"""Round-based self-improvement orchestration engine."""

__version__ = "0.1.0"
