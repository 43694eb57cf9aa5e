"""Patch generation, validation and XPatch."""
