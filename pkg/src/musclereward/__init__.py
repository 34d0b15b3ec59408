"""Reward learning for muscle-driven planar bodies."""
