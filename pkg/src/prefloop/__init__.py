"""Preference-based policy fine-tuning for a task-agnostic human-likeness reward model."""

__version__ = "0.1.0"
