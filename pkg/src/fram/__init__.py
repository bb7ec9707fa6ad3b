"""Resilient order statistics on a simulated faulty RAM."""
