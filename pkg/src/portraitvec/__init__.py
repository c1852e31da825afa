"""Layered SVG portrait reconstruction and landmark-driven animation."""
__version__ = "0.1.0"
