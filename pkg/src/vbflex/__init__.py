"""Virtual-battery flexibility models for building HVAC systems."""

__version__ = "0.1.0"
