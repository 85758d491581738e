"""Zonal statistics over tiled rasters and polygon layers via a sort-merge raster/vector join."""

__version__ = "0.1.0"
