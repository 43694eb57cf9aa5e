"""Deterministic simulation lab: synthetic targets, harness runner and generator mini-language."""
