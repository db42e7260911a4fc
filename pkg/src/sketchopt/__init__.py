"""Text-to-drawing synthesis by gradient descent over RGBA Bezier strokes."""

__version__ = "0.1.0"
