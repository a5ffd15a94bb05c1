"""DDR3 byte-lane and fly-by signal-integrity verification."""

__version__ = "0.1.0"
