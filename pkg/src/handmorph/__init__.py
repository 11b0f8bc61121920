"""handmorph: task text to robotic hand morphologies."""

__version__ = "0.1.0"
