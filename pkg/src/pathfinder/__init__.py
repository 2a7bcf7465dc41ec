"""Attack-path planning over multi-domain cyberspace models."""

__version__ = "0.1.0"
