"""Control landscapes of three-level systems with one forbidden transition."""
__version__ = "0.1.0"
