"""Spiking transformer student for multi-label attribute recognition, with distillation."""

__version__ = "0.1.0"
