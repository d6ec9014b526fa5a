"""Shape-constrained polynomial loss models and loss-optimal torque allocation."""

__version__ = "0.1.0"
