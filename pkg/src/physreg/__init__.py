"""Physics-informed linear regression toolkit."""

__version__ = "0.1.0"
