"""drivesim: compositional driving-scenario simulation for RL research."""

__version__ = "0.1.0"
