"""GP reverting-function distance fields and their ultrasonic guided-wave applications."""

__version__ = "0.1.0"
