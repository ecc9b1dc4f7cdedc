"""Conformance testbench for a fisheye-based cyclist-pedestrian collision warning pipeline."""

__version__ = "0.1.0"
