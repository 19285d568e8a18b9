"""Simulator for PUF-keyed secure backup and restore of resistive NVM."""

__version__ = "0.1.0"
