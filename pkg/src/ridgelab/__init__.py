"""ridgelab: convex analysis, disclination ridges and plate energy scaling."""

__version__ = "0.1.0"
