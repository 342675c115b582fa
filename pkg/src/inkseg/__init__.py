"""Character segmentation of digital ink."""

__version__ = "0.1.0"
