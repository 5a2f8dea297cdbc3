"""Figure regeneration from simulator run directories."""

__version__ = "0.1.0"
