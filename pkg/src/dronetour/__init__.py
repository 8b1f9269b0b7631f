"""Truck-and-drone last-mile delivery planning toolkit."""

__version__ = "0.1.0"
