"""Single-process federated learning simulator with personalized subnetwork warmup."""

__version__ = "0.1.0"
