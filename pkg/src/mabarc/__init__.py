"""Contextual bandits with per-arm revenue floors: planning, policies, simulation."""

__version__ = "0.1.0"
