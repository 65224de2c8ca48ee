"""Zone-method reheating-furnace simulator and physics-regularised surrogates."""

__version__ = "0.1.0"
