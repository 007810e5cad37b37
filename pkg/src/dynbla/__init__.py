"""Dynamic Byzantine lattice agreement and reconfigurable BFT objects."""

__version__ = "0.1.0"
