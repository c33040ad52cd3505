"""Sequential-correction training of physics-informed neural networks."""

__version__ = "0.1.0"
