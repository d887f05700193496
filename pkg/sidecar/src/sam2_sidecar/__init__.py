"""SAM2 sidecar for the cystrack /segment wire protocol."""

__version__ = "0.1.0"
