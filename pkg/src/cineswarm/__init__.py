"""Trajectory planning and simulation for a camera/lighting UAV formation."""

__version__ = "0.1.0"
