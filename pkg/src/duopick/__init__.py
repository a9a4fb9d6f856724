"""Dual-arm pepper harvesting: pose fitting, grasp planning, motion, executive."""

__version__ = "0.1.0"
