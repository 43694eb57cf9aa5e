"""Cyber reasoning system simulator: strategy loops, submission rules, scoring and a deterministic lab."""

__version__ = "0.1.0"
