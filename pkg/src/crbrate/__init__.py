"""CRB-rate tradeoff for MIMO integrated sensing and communication."""

__version__ = "0.1.0"
