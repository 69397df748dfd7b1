"""Desk-scale audio-visual speech recognition workbench with automatic labelling."""

__version__ = "0.1.0"
