"""DETECT: treatment-effect scoring from activity-classifier accuracy drop."""

__version__ = "0.1.0"
