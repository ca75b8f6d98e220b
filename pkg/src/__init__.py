"""BreathingMode - breathing-mode dynamics of contact-interacting bosons in a 1D harmonic trap."""

__version__ = "1.1.0"
