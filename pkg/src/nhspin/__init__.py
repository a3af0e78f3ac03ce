"""Directional nuclear spin transport in optically pumped electron-nuclear spin chains."""

__version__ = "0.1.0"
