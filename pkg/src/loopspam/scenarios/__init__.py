"""Bundled scenario configs (JSON text with a .cfg extension)."""
