"""Far-field MSR matrix completion for inverse obstacle scattering."""

__version__ = "0.1.0"
