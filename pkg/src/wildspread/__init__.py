"""Wildfire spread prediction from stacked environmental rasters.

Pipeline: ingest rasters and dated perimeters (:mod:`wildspread.geo`), assemble
per-day layer stacks (:mod:`wildspread.stacking`), sample patches into a zip store
(:mod:`wildspread.sampling`), train the convolutional classifier
(:mod:`wildspread.nn`, :mod:`wildspread.training`) and roll predictions forward
(:mod:`wildspread.rollout`).
"""

__version__ = "0.1.0"
