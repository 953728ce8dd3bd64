"""Fairness audit of satellite-based poverty maps, at synthetic desk scale.

Random convolutional features, ridge models, urban/rural disparity metrics,
targeting simulations and recalibration, plus rural-unit aggregation.
"""

__version__ = "0.1.0"
