"""Network service answering epsilon-prediction requests for SDS clients."""

__version__ = "0.1.0"
