"""Top-down attention framework: recursive multi-flow CNNs with hourglass attention."""

__version__ = "0.1.0"
