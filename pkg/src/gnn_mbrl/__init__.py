"""Model-based planning on a 3-ball avoidance task with a learned graph-network simulator."""

__version__ = "0.1.0"
