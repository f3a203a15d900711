"""Real-centric consistency learning on synthetic forgery data."""

__version__ = "0.1.0"
