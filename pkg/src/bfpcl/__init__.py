"""Continual learning with backward feature projection."""
