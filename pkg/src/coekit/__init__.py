"""Toolkit for branching norm-grounded narratives: corpus handling, adversarial
splits, task-sample construction, expert providers, chain-of-experts decoding,
and text-generation evaluation metrics."""

__version__ = "0.1.0"
