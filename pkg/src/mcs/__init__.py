"""Multi-task learned communication for cooperative grid-world agents."""

__version__ = "0.1.0"
