"""Skill discovery benchmark: quality-diversity and mutual-information RL on point environments."""

__version__ = "0.1.0"
