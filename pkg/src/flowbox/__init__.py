"""flowbox: desk-scale conditional flow matching."""

__version__ = "0.1.0"
