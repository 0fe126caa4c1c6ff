"""Post-selection DC magnetometry with an NV electron spin and a nuclear meter."""

__version__ = "0.1.0"
