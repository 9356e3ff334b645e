"""Short-term voltage stability assessment under class imbalance."""

__version__ = "0.1.0"
