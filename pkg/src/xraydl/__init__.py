"""Chest X-ray classification toolkit: tensors with reverse-mode gradients,
CNN and transfer-head models, data ingestion, Adam training and reports."""

__version__ = "0.1.0"
