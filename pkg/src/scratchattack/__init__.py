"""Evolutionary black-box adversarial scratch attacks and input-transformation defenses."""

__version__ = "0.1.0"
