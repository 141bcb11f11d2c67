"""Retrieval-augmented vision-language inspection of wind turbine blades."""

__version__ = "0.1.0"
