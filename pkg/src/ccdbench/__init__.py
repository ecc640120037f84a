"""Physics-informed simulator and benchmark harness for coherent radar
change detection."""

__version__ = "0.1.0"
