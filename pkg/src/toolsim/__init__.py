"""Tool-use corpus generation by multi-agent simulation, plus transcript evaluation."""

__version__ = "0.1.0"
